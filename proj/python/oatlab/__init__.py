"""Adjustable adversarial training: one model, test-time trade-offs."""

from oatlab._core import (
    Dataset,
    Model,
    encode_lambda,
    load_idx,
    set_precision,
    synth_glyphs,
    train,
)

__all__ = [
    "Dataset",
    "Model",
    "encode_lambda",
    "load_idx",
    "set_precision",
    "synth_glyphs",
    "train",
]
