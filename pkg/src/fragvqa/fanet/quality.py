"""Prediction wrappers: tensor normalization, quality outputs, and the
re-projectable quality-map record.

Pixel normalization happens here and nowhere else: fragments stay raw
uint8 all the way through sampling, then become unit-interval floats
standardized to roughly zero mean, half-unit scale at the network
boundary.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..errors import ContractError
from ..sampling import FragmentBatch, SamplingPlan
from .backbone import FANet

QMAP_MAGIC = "# fragvqa quality map v1"


def fragments_to_tensor(fragment_arrays) -> torch.Tensor:
    """Stack (T, H, W, C) uint8 fragment arrays into a normalized
    (B, C, T, H, W) float batch: x/255 -> (x - 0.5) / 0.25."""
    batch = []
    for arr in fragment_arrays:
        if arr.dtype != np.uint8 or arr.ndim != 4:
            raise ContractError("fragments must be (T, H, W, C) uint8")
        x = torch.from_numpy(np.ascontiguousarray(arr)).float() / 255.0
        batch.append((x - 0.5) / 0.25)
    return torch.stack(batch).permute(0, 4, 1, 2, 3).contiguous()


@dataclass
class QualityOutput:
    """Scalar score, the (t', G, G) quality map it is the exact mean of,
    and (when the batch carried a plan) the source-pixel rectangle of
    each map cell."""

    score: float
    quality_map: np.ndarray
    patch_geometry: Optional[np.ndarray] = None  # (G, G, 4) r0, r1, c0, c1


def predict(model: FANet, batch: FragmentBatch, device: str = "cpu") -> QualityOutput:
    """Score one fragment batch in eval mode."""
    model.eval()
    x = fragments_to_tensor([batch.fragments]).to(device)
    with torch.no_grad():
        scores, qmaps = model(x)
    qmap = qmaps[0].cpu().numpy()
    geometry = None
    if batch.plan is not None and batch.plan.grid_bounds.shape[0] == qmap.shape[1]:
        geometry = batch.plan.patch_rects(batch.spec.patch_size)
    return QualityOutput(score=float(scores[0].item()), quality_map=qmap,
                         patch_geometry=geometry)


def export_quality_map(out: QualityOutput, plan: SamplingPlan, patch_size: int,
                       record_path, overlay_path=None,
                       frame: np.ndarray | None = None) -> None:
    """Write the per-cell scores re-projected to source rectangles.

    The record is tab-delimited: one row per (t', i, j) cell with its
    source rectangle (``plan`` rectangle plus the drawn offset, sized
    ``patch_size``) and score; it round-trips losslessly through
    :func:`read_quality_record`. With ``overlay_path`` and a source
    ``frame``, also renders the temporally averaged map as a heatmap
    over the frame.
    """
    if plan is None:
        raise ContractError("quality-map export needs the sampling plan")
    tq, g, g2 = out.quality_map.shape
    if g != g2 or plan.grid_bounds.shape[:2] != (g, g):
        raise ContractError(
            f"plan grid {plan.grid_bounds.shape[:2]} does not match map {g}x{g}")
    rects = plan.patch_rects(patch_size)
    with open(record_path, "w", encoding="utf-8") as fh:
        fh.write(f"{QMAP_MAGIC}\n")
        fh.write(f"# shape\t{tq}\t{g}\t{g}\tscore\t{out.score!r}\n")
        fh.write("t\ti\tj\tr0\tr1\tc0\tc1\tvalue\n")
        for t in range(tq):
            for i in range(g):
                for j in range(g):
                    r0, r1, c0, c1 = rects[i, j]
                    fh.write(f"{t}\t{i}\t{j}\t{r0}\t{r1}\t{c0}\t{c1}\t"
                             f"{float(out.quality_map[t, i, j])!r}\n")
    if overlay_path is not None:
        if frame is None:
            raise ContractError("overlay rendering needs a source frame")
        from ..viz import render_quality_overlay

        render_quality_overlay(frame, rects, out.quality_map.mean(axis=0),
                               overlay_path)


def read_quality_record(path):
    """Parse an exported record back into (score, quality_map, rects)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != QMAP_MAGIC:
        raise ContractError(f"{path}: not a quality-map record")
    meta = lines[1].split("\t")
    tq, g = int(meta[1]), int(meta[2])
    score = float(meta[5])
    qmap = np.zeros((tq, g, g))
    rects = np.zeros((g, g, 4), dtype=np.int64)
    for ln in lines[3:]:
        if not ln:
            continue
        t, i, j, r0, r1, c0, c1, val = ln.split("\t")
        qmap[int(t), int(i), int(j)] = float(val)
        rects[int(i), int(j)] = (int(r0), int(r1), int(c0), int(c1))
    return score, qmap, rects
