"""Dual-pooling ear-image gender classifier.

A small CNN toolkit with a fixed reference architecture (seven
convolutions, two residual additions, a concatenated global-average /
global-max pooling head) plus training, metrics, checkpoints and a
synthetic smoke-test corpus. The heavy lifting lives in the C++
extension module `earconv._core`.
"""

from ._core import (
    CheckpointError,
    ConfigError,
    ImageDecodeError,
    LabelError,
    LayerLookupError,
    ManifestParseError,
    MetricError,
    Model,
    RangeError,
    Rng,
    ShapeError,
    bce_loss,
    build_earnet,
    build_earnet_small,
    confusion,
    decode_and_resize,
    evaluate,
    load_checkpoint,
    roc_auc,
    set_thread_count,
    synthetic_dataset,
    thread_count,
    train,
    write_synthetic_corpus,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ImageDecodeError",
    "LabelError",
    "LayerLookupError",
    "ManifestParseError",
    "MetricError",
    "Model",
    "RangeError",
    "Rng",
    "ShapeError",
    "bce_loss",
    "build_earnet",
    "build_earnet_small",
    "confusion",
    "decode_and_resize",
    "evaluate",
    "load_checkpoint",
    "roc_auc",
    "set_thread_count",
    "synthetic_dataset",
    "thread_count",
    "train",
    "write_synthetic_corpus",
]

__version__ = "0.1.0"
