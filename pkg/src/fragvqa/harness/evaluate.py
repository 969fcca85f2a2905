"""Evaluation: ensembled scoring of manifest splits and grouped
resolution sweeps."""

from __future__ import annotations

import numpy as np
import torch

from ..errors import ContractError
from ..fanet.backbone import FANet
from ..fanet.quality import fragments_to_tensor
from ..sampling import GridSpec
from .data import ClipDataset, derive_seed, sample_input


def score_clip(model: FANet, clip, spec: GridSpec, variant: str,
               sample_seeds, device: str = "cpu") -> float:
    """Mean score over one seeded sampling per entry of ``sample_seeds``."""
    model.eval()
    scores = []
    for s in sample_seeds:
        batch = sample_input(clip, spec, variant, int(s))
        x = fragments_to_tensor([batch.fragments]).to(device)
        with torch.no_grad():
            out, _ = model(x)
        scores.append(float(out[0].item()))
    return float(np.mean(scores))


def evaluate(model: FANet, records, variant: str = "gms", n_samples: int = 1,
             seed: int = 0, device: str = "cpu", split: str | None = None,
             sample_seeds=None) -> dict:
    """Score every record and correlate against its label.

    Per-video sampling seeds derive deterministically from
    (seed, video index, sample index); pass ``sample_seeds`` explicitly
    to pin them (e.g. identical seeds reduce the ensemble to a single
    run). Returns the three correlations plus per-video raw scores.
    """
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    if sample_seeds is not None and len(sample_seeds) != n_samples:
        raise ContractError(
            f"got {len(sample_seeds)} explicit seeds for {n_samples} samples")
    dataset = ClipDataset(records, split)
    if len(dataset) < 2:
        raise ContractError(
            f"need >= 2 records to correlate, got {len(dataset)}")
    cfg = model.cfg
    spec = GridSpec(cfg.grid_count, cfg.patch_size, cfg.frames)
    per_video = []
    for i in range(len(dataset)):
        clip, mos = dataset[i]
        seeds = (list(sample_seeds) if sample_seeds is not None
                 else [derive_seed(seed, 3, i, k) for k in range(n_samples)])
        score = score_clip(model, clip, spec, variant, seeds, device)
        per_video.append({"source_id": clip.source_id or dataset.records[i].path,
                          "mos": float(mos), "score": score})
    preds = [v["score"] for v in per_video]
    labels = [v["mos"] for v in per_video]
    from ..metrics import all_metrics

    return {"variant": variant, "n_samples": n_samples, "seed": seed,
            "metrics": all_metrics(preds, labels), "per_video": per_video}


def resolution_sweep(model: FANet, groups: dict, variant: str = "gms",
                     n_samples: int = 1, seed: int = 0,
                     device: str = "cpu") -> dict:
    """Evaluate each named record group (e.g. one per source resolution)
    with identical settings; a single group reduces to evaluate()."""
    if not groups:
        raise ContractError("resolution sweep needs at least one group")
    return {name: evaluate(model, records, variant=variant,
                           n_samples=n_samples, seed=seed, device=device)
            for name, records in groups.items()}
