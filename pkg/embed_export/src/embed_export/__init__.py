"""Export per-token masked-language-model hidden states to .emb bundles."""

from .export import ExportConfig, ExportedCaption, HiddenStateExporter, export, load_captions
from .writer import write_embedding_file

__version__ = "0.1.0"
