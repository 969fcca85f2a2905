"""Single-sampling stability: score spread across repeated samplings and
pairwise order agreement against an ensembled reference."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..fanet.backbone import FANet
from ..sampling import GridSpec
from .data import ClipDataset, derive_seed, sample_input
from .evaluate import score_clip


def stability_analysis(model: FANet, records, n_repeats: int = 16,
                       ensemble_k: int = 6, seed: int = 0,
                       variant: str = "gms", label_range: float = 4.0,
                       device: str = "cpu", split: str | None = None) -> dict:
    """Repeat single-sampling scoring per video and compare against the
    ensemble mean.

    Reports the mean per-video standard deviation across the
    ``n_repeats`` single samplings, that value normalized by the
    dataset's nominal label-range width, and pair accuracy: the
    fraction of (video pair, repeat) order decisions that match the
    order of the ``ensemble_k``-sample mean scores (agreement includes
    both differences being exactly zero).
    """
    if n_repeats < 2:
        raise ContractError(f"n_repeats must be >= 2, got {n_repeats}")
    if ensemble_k < 1:
        raise ContractError(f"ensemble_k must be >= 1, got {ensemble_k}")
    if label_range <= 0:
        raise ContractError(f"label_range must be positive, got {label_range}")
    dataset = ClipDataset(records, split)
    n = len(dataset)
    if n < 2:
        raise ContractError(f"need >= 2 videos for pair accuracy, got {n}")
    cfg = model.cfg
    spec = GridSpec(cfg.grid_count, cfg.patch_size, cfg.frames)

    singles = np.zeros((n, n_repeats))
    ensembles = np.zeros(n)
    per_video = []
    for i in range(n):
        clip, mos = dataset[i]
        for r in range(n_repeats):
            singles[i, r] = score_clip(model, clip, spec, variant,
                                       [derive_seed(seed, 4, i, r)], device)
        ens_seeds = [derive_seed(seed, 5, i, k) for k in range(ensemble_k)]
        ensembles[i] = score_clip(model, clip, spec, variant, ens_seeds, device)
        per_video.append({
            "source_id": clip.source_id or dataset.records[i].path,
            "mos": float(mos),
            "single_mean": float(singles[i].mean()),
            "single_std": float(singles[i].std(ddof=1)),
            "ensemble_score": float(ensembles[i]),
        })

    mean_std = float(np.mean([v["single_std"] for v in per_video]))
    agree = 0
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            ref = np.sign(ensembles[i] - ensembles[j])
            got = np.sign(singles[i] - singles[j])
            agree += int(np.count_nonzero(got == ref))
            total += n_repeats
    return {
        "n_repeats": n_repeats,
        "ensemble_k": ensemble_k,
        "variant": variant,
        "mean_std": mean_std,
        "normalized_std": mean_std / label_range,
        "label_range": label_range,
        "pair_accuracy": agree / total,
        "per_video": per_video,
    }
