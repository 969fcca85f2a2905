"""Rank and linear correlation metrics, plus the differentiable
linear-correlation training loss.

The numpy paths are evaluation-time metrics over prediction/label pairs:

* ``plcc``: Pearson linear correlation.
* ``srcc``: Spearman rank correlation, ties resolved by midranks.
* ``krcc``: Kendall rank correlation, tau-b tie correction.

``plcc_loss`` is the torch training objective (1 - r) / 2 with a small
epsilon guard inside the variance square roots so constant batches give
a finite, zero-gradient-safe value instead of NaN.
"""

from __future__ import annotations

import numpy as np
import scipy.stats
import torch

from .errors import ContractError, DegenerateSeriesError


def _check_pair(a, b, min_len: int = 2):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"series length mismatch: {a.shape} vs {b.shape}")
    if a.size < min_len:
        raise ContractError(f"need at least {min_len} points, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ContractError("series contain non-finite values")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateSeriesError(
            "correlation undefined: a series is constant")
    return a, b


def plcc(pred, target) -> float:
    """Pearson linear correlation coefficient."""
    a, b = _check_pair(pred, target)
    return float(scipy.stats.pearsonr(a, b)[0])


def srcc(pred, target) -> float:
    """Spearman rank correlation; tied values receive midranks."""
    a, b = _check_pair(pred, target)
    return float(scipy.stats.spearmanr(a, b)[0])


def krcc(pred, target) -> float:
    """Kendall rank correlation with tau-b tie correction."""
    a, b = _check_pair(pred, target)
    return float(scipy.stats.kendalltau(a, b)[0])


def all_metrics(pred, target) -> dict:
    return {"plcc": plcc(pred, target),
            "srcc": srcc(pred, target),
            "krcc": krcc(pred, target)}


def plcc_loss(pred: torch.Tensor, target: torch.Tensor,
              eps: float = 1e-8) -> torch.Tensor:
    """Differentiable (1 - pearson) / 2 over a batch.

    Needs at least two elements; with fewer there is no variance to
    correlate against. ``eps`` sits inside each standard-deviation sqrt,
    which keeps the loss finite (value 0.5) and the gradient bounded when
    either side of the batch is constant.
    """
    pred = pred.flatten()
    target = target.flatten()
    if pred.shape != target.shape:
        raise ContractError(
            f"series length mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    n = pred.numel()
    if n < 2:
        raise ContractError(f"plcc_loss needs a batch of >= 2, got {n}")
    pc = pred - pred.mean()
    tc = target - target.mean()
    denom = torch.sqrt(pc.square().sum() + eps) * torch.sqrt(tc.square().sum() + eps)
    r = (pc * tc).sum() / denom
    return (1.0 - r) / 2.0
