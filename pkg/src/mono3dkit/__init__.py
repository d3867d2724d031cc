"""Deterministic desk-scale toolkit for unit-aware caption augmentation,
embedding similarity assessment, text-guided geometry attention, detection
losses, and oriented 3D-IoU evaluation."""

from . import augment, cli, embfile, eval3d, gradcheck, losses, similarity, text3d, tge
from .augment import AugmentConfig, AugmentedCaption, augment_caption, remap_descriptor
from .embfile import EmbeddingBundle, read_bundle, validate_bundle, write_bundle
from .eval3d import ScenarioRecord, accuracy_at, bucket, scenario_report
from .losses import Box2D, Box3D, iou3d
from .similarity import corpus_similarity, cosine_similarity, euclidean_similarity
from .text3d import Caption, DistanceDescriptor, Form, LengthUnit, scan_descriptors
from .tge import depth_encoder_layer, fc_project, mhca, mhsa, tge_forward

__version__ = "0.1.0"
