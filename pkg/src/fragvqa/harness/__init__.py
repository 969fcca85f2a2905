"""Training, evaluation, stability analysis, resolution sweeps, and the
analytic cost model."""

from .data import ClipDataset, derive_seed, make_splits, sample_input
from .evaluate import evaluate, resolution_sweep, score_clip
from .flops import FlopsReport, flops_count
from .stability import stability_analysis
from .train import TrainConfig, train

__all__ = [
    "ClipDataset", "FlopsReport", "TrainConfig", "derive_seed", "evaluate",
    "flops_count", "make_splits", "resolution_sweep", "sample_input",
    "score_clip", "stability_analysis", "train",
]
