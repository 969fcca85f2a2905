"""Figure rendering: quality-map overlays, fragment contact sheets, and
report plots for training, evaluation, and stability runs.

All renderers write image files and never open a window; the Agg
backend is forced before pyplot is imported.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ContractError


def _normalize_map(map2d: np.ndarray):
    lo, hi = float(map2d.min()), float(map2d.max())
    if hi - lo < 1e-12:
        return np.full_like(map2d, 0.5, dtype=np.float64), lo, hi
    return (map2d.astype(np.float64) - lo) / (hi - lo), lo, hi


def render_quality_overlay(frame: np.ndarray, rects: np.ndarray,
                           map2d: np.ndarray, path) -> None:
    """Tint each sampled source rectangle of ``frame`` by its map value.

    ``rects`` is (G, G, 4) row/col bounds in source pixels, ``map2d`` the
    matching (G, G) cell scores. A constant map renders as a uniform
    mid-scale tint.
    """
    if frame.ndim != 3 or frame.shape[2] not in (1, 3):
        raise ContractError(f"frame must be (H, W, C), got {frame.shape}")
    if rects.shape[:2] != map2d.shape:
        raise ContractError(
            f"rects grid {rects.shape[:2]} != map grid {map2d.shape}")
    norm, lo, hi = _normalize_map(map2d)
    cmap = plt.get_cmap("RdYlGn")
    fig, ax = plt.subplots(figsize=(8, 8 * frame.shape[0] / frame.shape[1]))
    ax.imshow(frame.squeeze(-1) if frame.shape[2] == 1 else frame,
              cmap="gray" if frame.shape[2] == 1 else None)
    for i in range(rects.shape[0]):
        for j in range(rects.shape[1]):
            r0, r1, c0, c1 = (int(v) for v in rects[i, j])
            color = cmap(float(norm[i, j]))
            ax.add_patch(plt.Rectangle((c0 - 0.5, r0 - 0.5), c1 - c0, r1 - r0,
                                       facecolor=color, alpha=0.45,
                                       edgecolor=color, linewidth=1.5))
    sm = plt.cm.ScalarMappable(cmap=cmap,
                               norm=plt.Normalize(vmin=lo, vmax=max(hi, lo + 1e-12)))
    fig.colorbar(sm, ax=ax, fraction=0.04, label="patch score")
    ax.set_title("patch quality re-projected to source pixels")
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_contact_sheet(fragments: np.ndarray, path, grid_count: int = 0,
                         max_frames: int = 8) -> None:
    """Lay out up to ``max_frames`` fragment frames side by side, with
    cell boundaries drawn when ``grid_count`` is given."""
    if fragments.ndim != 4:
        raise ContractError(f"fragments must be (T, H, W, C), got {fragments.shape}")
    t = min(fragments.shape[0], max_frames)
    idxs = np.linspace(0, fragments.shape[0] - 1, t).round().astype(int)
    fig, axes = plt.subplots(1, t, figsize=(3 * t, 3.2), squeeze=False)
    side = fragments.shape[1]
    for col, fi in enumerate(idxs):
        ax = axes[0][col]
        img = fragments[fi]
        ax.imshow(img.squeeze(-1) if img.shape[2] == 1 else img,
                  cmap="gray" if img.shape[2] == 1 else None)
        if grid_count > 1:
            for k in range(1, grid_count):
                ax.axhline(k * side / grid_count - 0.5, color="w", lw=0.6)
                ax.axvline(k * side / grid_count - 0.5, color="w", lw=0.6)
        ax.set_title(f"frame {fi}", fontsize=9)
        ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_training_curves(history, path) -> None:
    """Plot per-epoch training loss and validation correlations."""
    if not history:
        raise ContractError("empty training history")
    epochs = [h["epoch"] for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [h["train_loss"] for h in history], marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    plotted = False
    for key in ("val_srcc", "val_plcc"):
        vals = [(e, h[key]) for e, h in zip(epochs, history)
                if h.get(key) is not None]
        if vals:
            ax2.plot([v[0] for v in vals], [v[1] for v in vals],
                     marker="o", label=key)
            plotted = True
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation correlation")
    ax2.set_ylim(-1.05, 1.05)
    ax2.grid(alpha=0.3)
    if plotted:
        ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval_scatter(result: dict, path) -> None:
    """Scatter predicted scores against labels, metrics in the title."""
    per_video = result.get("per_video", [])
    if not per_video:
        raise ContractError("evaluation result has no per-video records")
    mos = [v["mos"] for v in per_video]
    pred = [v["score"] for v in per_video]
    m = result["metrics"]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(mos, pred, s=18, alpha=0.7)
    ax.set_xlabel("label")
    ax.set_ylabel("predicted score")
    ax.set_title("SRCC %.3f  PLCC %.3f  KRCC %.3f"
                 % (m["srcc"], m["plcc"], m["krcc"]))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_stability(result: dict, path) -> None:
    """Per-video single-sampling spread around the ensemble score."""
    per_video = result.get("per_video", [])
    if not per_video:
        raise ContractError("stability result has no per-video records")
    xs = np.arange(len(per_video))
    means = np.array([v["single_mean"] for v in per_video])
    stds = np.array([v["single_std"] for v in per_video])
    ens = np.array([v["ensemble_score"] for v in per_video])
    order = np.argsort(ens)
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(per_video)), 4))
    ax.errorbar(xs, means[order], yerr=stds[order], fmt="o", ms=3,
                capsize=2, label="single sampling (mean +- std)")
    ax.plot(xs, ens[order], "r.", ms=5, label="%d-sample ensemble"
            % result["ensemble_k"])
    ax.set_xlabel("video (sorted by ensemble score)")
    ax.set_ylabel("score")
    ax.set_title("pair accuracy %.4f  normalized std %.5f"
                 % (result["pair_accuracy"], result["normalized_std"]))
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
