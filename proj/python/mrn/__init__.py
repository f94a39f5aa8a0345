"""Dual-decoder melanoma lesion segmentation.

A from-scratch differentiable array core drives a dual-decoder network (shared
encoder, attention-guided auxiliary decoder, output decoder) next to a plain
single-path baseline. This package wraps the C++ core: model construction and
inference, checkpoint round-trips, losses, metrics, synthetic data, and the
finite-difference gradient checker.
"""

from ._core import (
    Baseline,
    Mrn,
    __version__,
    bce_loss,
    dice_loss,
    dual_loss,
    gradcheck,
    metrics,
    synth_dataset,
)

__all__ = [
    "Baseline",
    "Mrn",
    "__version__",
    "bce_loss",
    "dice_loss",
    "dual_loss",
    "gradcheck",
    "metrics",
    "synth_dataset",
]
