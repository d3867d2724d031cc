"""Export per-token hidden states of a masked language model to bundle files.

Each caption becomes one ".emb" file whose mask is the tokenizer's
attention mask (1 for real tokens including specials, 0 for padding) and
whose values are one chosen hidden-states layer, padded to a fixed length.
A manifest JSONL pairs original and augmented exports by caption id; with
a single corpus the manifest pairs every caption with itself.

Inference runs in eval mode with gradients disabled, so exporting the same
corpus twice yields byte-identical files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger("embed_export")


@dataclass
class ExportConfig:
    model: str = "roberta-base"
    layer: int = -1            # hidden-states index; -1 is the last layer
    max_length: int = 64
    out_dir: Path = Path("bundles")
    batch_size: int = 8

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.max_length < 2:
            raise ValueError("max_length must be at least 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class ExportedCaption:
    id: str
    path: Path
    truncated: bool = False


def load_captions(path: str | Path) -> list[tuple[str, str]]:
    """Caption JSONL: one {"id": str, "text": str} object per line."""
    captions = []
    seen = set()
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if not isinstance(obj.get("id"), str) or not isinstance(obj.get("text"), str):
            raise ValueError(f'line {n}: expected {{"id": str, "text": str}}')
        if obj["id"] in seen:
            raise ValueError(f"line {n}: duplicate caption id {obj['id']!r}")
        seen.add(obj["id"])
        captions.append((obj["id"], obj["text"]))
    return captions


class HiddenStateExporter:
    """Loads a model once and writes one bundle per caption."""

    def __init__(self, cfg: ExportConfig):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self.cfg = cfg
        self.torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        self.model = AutoModel.from_pretrained(cfg.model)
        self.model.eval()
        n_layers = self.model.config.num_hidden_layers
        # hidden_states has n_layers + 1 entries (embeddings first)
        if not -(n_layers + 1) <= cfg.layer <= n_layers:
            raise ValueError(
                f"layer {cfg.layer} outside the model's range "
                f"[-{n_layers + 1}, {n_layers}]"
            )

    def export_corpus(
        self, captions: list[tuple[str, str]], subdir: str = ""
    ) -> list[ExportedCaption]:
        from .writer import write_embedding_file

        target = self.cfg.out_dir / subdir if subdir else self.cfg.out_dir
        target.mkdir(parents=True, exist_ok=True)
        results: list[ExportedCaption] = []
        for start in range(0, len(captions), self.cfg.batch_size):
            batch = captions[start:start + self.cfg.batch_size]
            results.extend(self._export_batch(batch, target))
        return results

    def _export_batch(self, batch, target: Path) -> list[ExportedCaption]:
        from .writer import write_embedding_file

        ids, texts, plain_lengths = [], [], []
        for cid, text in batch:
            try:
                plain = len(self.tokenizer(text, truncation=False)["input_ids"])
            except Exception as e:  # tokenization failure: log and skip the record
                log.warning("caption %r failed to tokenize, skipped: %s", cid, e)
                continue
            ids.append(cid)
            texts.append(text)
            plain_lengths.append(plain)
        if not ids:
            return []
        encoded = self.tokenizer(
            texts,
            padding="max_length",
            truncation=True,
            max_length=self.cfg.max_length,
            return_tensors="pt",
        )
        with self.torch.no_grad():
            outputs = self.model(**encoded, output_hidden_states=True)
        hidden = outputs.hidden_states[self.cfg.layer]
        mask = encoded["attention_mask"].numpy().astype("uint8")
        values = hidden.numpy().astype("float32")
        out = []
        for row, cid in enumerate(ids):
            truncated = plain_lengths[row] > self.cfg.max_length
            if truncated:
                log.warning(
                    "caption %r tokenizes to %d tokens, truncated to %d",
                    cid, plain_lengths[row], self.cfg.max_length,
                )
            path = target / f"{cid}.emb"
            write_embedding_file(path, cid, mask[row], values[row])
            out.append(ExportedCaption(id=cid, path=path, truncated=truncated))
        return out


def export(
    corpus: str | Path,
    cfg: ExportConfig,
    augmented: str | Path | None = None,
    manifest: str | Path | None = None,
) -> list[dict]:
    """Export one or two corpora and return (optionally write) manifest entries.

    With two corpora, entries pair files by caption id; augmented captions
    missing from the original corpus (or vice versa) are logged and skipped.
    With one corpus every caption is paired with itself.  Bundle paths in
    the manifest are relative to the manifest's directory.
    """
    exporter = HiddenStateExporter(cfg)
    originals = {
        e.id: e for e in exporter.export_corpus(load_captions(corpus), "original")
    }
    if augmented is not None:
        others = {
            e.id: e for e in exporter.export_corpus(load_captions(augmented), "augmented")
        }
    else:
        others = originals
    entries = []
    for cid in sorted(originals):
        if cid not in others:
            log.warning("caption %r has no augmented counterpart; skipped", cid)
            continue
        entries.append({
            "id": cid,
            "original": str(originals[cid].path),
            "augmented": str(others[cid].path),
            "truncated": originals[cid].truncated or others[cid].truncated,
        })
    for cid in sorted(set(others) - set(originals)):
        log.warning("augmented caption %r has no original counterpart; skipped", cid)
    if manifest is not None:
        manifest = Path(manifest)
        manifest.parent.mkdir(parents=True, exist_ok=True)
        base = manifest.parent
        rel_entries = [
            {
                **entry,
                "original": _relative_to(Path(entry["original"]), base),
                "augmented": _relative_to(Path(entry["augmented"]), base),
            }
            for entry in entries
        ]
        manifest.write_text(
            "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in rel_entries),
            encoding="utf-8",
        )
        return rel_entries
    return entries


def _relative_to(path: Path, base: Path) -> str:
    try:
        return str(path.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path.resolve())
