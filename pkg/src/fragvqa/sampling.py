"""Grid mini-patch sampling.

The quality-retaining sampler: partition each frame into a uniform
``grid_count x grid_count`` grid, draw one raw-resolution
``patch_size x patch_size`` mini-patch per grid cell with offsets shared
by every frame (temporal alignment), and splice the patches back in grid
order. The spliced stack is called a fragment batch and is the network's
input. Every pixel of a fragment is a bit-exact copy of a source pixel;
no resampling happens anywhere on this path.

Ablation variants of the sampler live here too: per-frame (unaligned)
offset draws, grid-free random mini-patches, shuffled splice positions,
bilinear resizing, and aligned random cropping.

Randomness: every draw comes from ``numpy.random.Generator`` backed by
the PCG64 bit generator, seeded explicitly. Plans record their seed, so
any fragment batch can be reproduced from (clip, spec, seed).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, FragmentInfeasibleError, PartitionError
from .media import VideoClip

VARIANTS = ("gms", "random_minipatch", "shuffled", "unaligned", "resize", "crop")


@dataclass(frozen=True)
class GridSpec:
    """Sampler geometry: grids per side, mini-patch side in pixels, frames."""

    grid_count: int
    patch_size: int
    frames: int

    def __post_init__(self):
        if self.grid_count < 1 or self.patch_size < 1 or self.frames < 1:
            raise ContractError(f"invalid grid spec {self}")

    @property
    def output_side(self) -> int:
        return self.grid_count * self.patch_size

    def check_feasible(self, height: int, width: int) -> None:
        """Every grid cell must admit one patch: floor(side / G) >= S."""
        g, s = self.grid_count, self.patch_size
        if height // g < s or width // g < s:
            raise FragmentInfeasibleError(
                f"frame {height}x{width} with {g}x{g} grids has min cell "
                f"{height // g}x{width // g} < patch size {s}; need at least "
                f"{g * s}x{g * s}")


@dataclass
class SamplingPlan:
    """Realized per-grid offsets, shared across frames unless
    ``frame_offsets`` is set (the unaligned variant).

    offsets:        (G, G, 2) int64, (row, col) relative to each cell origin
    grid_bounds:    (G, G, 4) int64 half-open rectangles (r0, r1, c0, c1)
    rng_seed:       the seed the offsets were drawn from
    frame_offsets:  optional (T, G, G, 2), present only for unaligned draws
    splice_perm:    optional (G*G,) permutation of splice positions
                    (shuffled variant); position index i*G+j receives the
                    patch of grid splice_perm[i*G+j]
    """

    offsets: np.ndarray
    grid_bounds: np.ndarray
    rng_seed: int
    frame_offsets: Optional[np.ndarray] = None
    splice_perm: Optional[np.ndarray] = None

    def patch_rects(self, patch_size: int) -> np.ndarray:
        """Source rectangles (G, G, 4) actually covered by each patch."""
        r0 = self.grid_bounds[..., 0] + self.offsets[..., 0]
        c0 = self.grid_bounds[..., 2] + self.offsets[..., 1]
        return np.stack([r0, r0 + patch_size, c0, c0 + patch_size], axis=-1)


@dataclass
class FragmentBatch:
    """Spliced mini-patch tensor (T, G*S, G*S, C) plus its provenance."""

    fragments: np.ndarray
    plan: Optional[SamplingPlan]
    variant: str
    spec: GridSpec

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        t, h, w, _ = self.fragments.shape
        side = self.spec.output_side
        if h != side or w != side:
            raise ContractError(
                f"fragment side {h}x{w} must equal grid_count*patch_size = {side}")
        if t != self.spec.frames:
            raise ContractError(f"fragment frames {t} != spec frames {self.spec.frames}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def partition_grids(height: int, width: int, grid_count: int) -> np.ndarray:
    """Uniform grid partition of a frame into half-open rectangles.

    Cell (i, j) covers rows [floor(i*H/G), floor((i+1)*H/G)) and columns
    [floor(j*W/G), floor((j+1)*W/G)). Endpoints are floored, so the cells
    tile the frame exactly and interior cells differ by at most one pixel
    when G does not divide the side.
    """
    g = grid_count
    if g < 1:
        raise PartitionError(f"grid count must be >= 1, got {g}")
    if g > min(height, width):
        raise PartitionError(
            f"cannot cut a {height}x{width} frame into {g}x{g} grids")
    rows = (np.arange(g + 1, dtype=np.int64) * height) // g
    cols = (np.arange(g + 1, dtype=np.int64) * width) // g
    rects = np.empty((g, g, 4), dtype=np.int64)
    rects[..., 0] = rows[:-1, None]
    rects[..., 1] = rows[1:, None]
    rects[..., 2] = cols[None, :-1]
    rects[..., 3] = cols[None, 1:]
    return rects


def _draw_offsets(rng: np.random.Generator, rects: np.ndarray, patch_size: int) -> np.ndarray:
    """One (row, col) offset per grid, row-major draw order, row before col."""
    g = rects.shape[0]
    offsets = np.empty((g, g, 2), dtype=np.int64)
    for i in range(g):
        for j in range(g):
            r0, r1, c0, c1 = rects[i, j]
            free_h = (r1 - r0) - patch_size
            free_w = (c1 - c0) - patch_size
            if free_h < 0 or free_w < 0:
                raise FragmentInfeasibleError(
                    f"grid ({i},{j}) is {r1 - r0}x{c1 - c0}, smaller than "
                    f"patch size {patch_size}")
            offsets[i, j, 0] = rng.integers(0, free_h, endpoint=True)
            offsets[i, j, 1] = rng.integers(0, free_w, endpoint=True)
    return offsets


def make_plan(rects: np.ndarray, patch_size: int, seed: int) -> SamplingPlan:
    """Draw one aligned sampling plan over the given grid rectangles.

    Offsets are uniform over the admissible range of each cell,
    independent across cells, drawn in row-major cell order from a
    PCG64 generator seeded with ``seed``.
    """
    offsets = _draw_offsets(_rng(seed), rects, patch_size)
    return SamplingPlan(offsets=offsets, grid_bounds=rects.copy(), rng_seed=seed)


def _splice(clip_frames: np.ndarray, rects: np.ndarray, offsets: np.ndarray,
            patch_size: int, perm: Optional[np.ndarray] = None) -> np.ndarray:
    """Copy each patch into its splice position. ``offsets`` is (G,G,2) for
    aligned plans or (T,G,G,2) for per-frame draws."""
    t_n = clip_frames.shape[0]
    g, s = rects.shape[0], patch_size
    out = np.empty((t_n, g * s, g * s, clip_frames.shape[3]), dtype=clip_frames.dtype)
    per_frame = offsets.ndim == 4
    for i in range(g):
        for j in range(g):
            dest = i * g + j if perm is None else int(np.nonzero(perm == i * g + j)[0][0])
            di, dj = divmod(dest, g)
            r_base, _, c_base, _ = rects[i, j]
            if per_frame:
                for t in range(t_n):
                    r0 = r_base + offsets[t, i, j, 0]
                    c0 = c_base + offsets[t, i, j, 1]
                    out[t, di * s:(di + 1) * s, dj * s:(dj + 1) * s] = \
                        clip_frames[t, r0:r0 + s, c0:c0 + s]
            else:
                r0 = r_base + offsets[i, j, 0]
                c0 = c_base + offsets[i, j, 1]
                out[:, di * s:(di + 1) * s, dj * s:(dj + 1) * s] = \
                    clip_frames[:, r0:r0 + s, c0:c0 + s]
    return out


def _check_clip(clip: VideoClip, spec: GridSpec) -> None:
    if clip.num_frames != spec.frames:
        raise ContractError(
            f"clip has {clip.num_frames} frames, spec expects {spec.frames}")
    spec.check_feasible(clip.height, clip.width)


def extract_fragments(clip: VideoClip, plan: SamplingPlan, spec: GridSpec) -> FragmentBatch:
    """Aligned grid mini-patch sampling: the quality-retaining path.

    Block (i, j) of every output frame is a bit-exact copy of the source
    region ``grid_bounds[i,j] + offsets[i,j]``; the same region for every
    frame.
    """
    _check_clip(clip, spec)
    g = spec.grid_count
    if plan.grid_bounds.shape[:2] != (g, g):
        raise ContractError(
            f"plan is for a {plan.grid_bounds.shape[0]}x{plan.grid_bounds.shape[1]} "
            f"grid, spec expects {g}x{g}")
    expected = partition_grids(clip.height, clip.width, g)
    if not np.array_equal(plan.grid_bounds, expected):
        raise ContractError("plan grid bounds do not match this clip's partition")
    frags = _splice(clip.frames, plan.grid_bounds, plan.offsets, spec.patch_size)
    return FragmentBatch(fragments=frags, plan=plan, variant="gms", spec=spec)


def sample_gms(clip: VideoClip, spec: GridSpec, seed: int) -> FragmentBatch:
    """Convenience path: partition, plan, extract."""
    _check_clip(clip, spec)
    rects = partition_grids(clip.height, clip.width, spec.grid_count)
    return extract_fragments(clip, make_plan(rects, spec.patch_size, seed), spec)


def variant_unaligned(clip: VideoClip, spec: GridSpec, seed: int) -> FragmentBatch:
    """Ablation: offsets redrawn independently for every frame (the
    temporal-alignment constraint dropped). Frame-major draw order."""
    _check_clip(clip, spec)
    rects = partition_grids(clip.height, clip.width, spec.grid_count)
    rng = _rng(seed)
    per_frame = np.stack([_draw_offsets(rng, rects, spec.patch_size)
                          for _ in range(spec.frames)])
    plan = SamplingPlan(offsets=per_frame[0].copy(), grid_bounds=rects,
                        rng_seed=seed, frame_offsets=per_frame)
    frags = _splice(clip.frames, rects, per_frame, spec.patch_size)
    return FragmentBatch(fragments=frags, plan=plan, variant="unaligned", spec=spec)


def variant_random_minipatches(clip: VideoClip, spec: GridSpec, seed: int) -> FragmentBatch:
    """Ablation: ignore the grid; draw G*G patches anywhere in the frame
    (still temporally aligned) and splice them in draw order. Patches may
    overlap."""
    _check_clip(clip, spec)
    g, s = spec.grid_count, spec.patch_size
    h, w = clip.height, clip.width
    rng = _rng(seed)
    offsets = np.empty((g, g, 2), dtype=np.int64)
    for i in range(g):
        for j in range(g):
            offsets[i, j, 0] = rng.integers(0, h - s, endpoint=True)
            offsets[i, j, 1] = rng.integers(0, w - s, endpoint=True)
    full = np.array([0, h, 0, w], dtype=np.int64)
    bounds = np.broadcast_to(full, (g, g, 4)).copy()
    plan = SamplingPlan(offsets=offsets, grid_bounds=bounds, rng_seed=seed)
    frags = _splice(clip.frames, bounds, offsets, s)
    return FragmentBatch(fragments=frags, plan=plan, variant="random_minipatch", spec=spec)


def variant_shuffled(clip: VideoClip, spec: GridSpec, seed: int) -> FragmentBatch:
    """Ablation: grid patches spliced at permuted positions (contextual
    relations destroyed). The offsets are drawn exactly as in the aligned
    path, then the permutation is drawn from the same generator."""
    _check_clip(clip, spec)
    g = spec.grid_count
    rects = partition_grids(clip.height, clip.width, g)
    rng = _rng(seed)
    offsets = _draw_offsets(rng, rects, spec.patch_size)
    perm = rng.permutation(g * g).astype(np.int64)
    plan = SamplingPlan(offsets=offsets, grid_bounds=rects, rng_seed=seed,
                        splice_perm=perm)
    frags = _splice(clip.frames, rects, offsets, spec.patch_size, perm=perm)
    return FragmentBatch(fragments=frags, plan=plan, variant="shuffled", spec=spec)


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with half-pixel-center alignment.

    Output center (i + 0.5) maps to source coordinate
    (i + 0.5) * in / out - 0.5, clamped to the valid range; accumulation
    is float64 and integer inputs round back half-to-even. Same-size
    resize is therefore exactly the identity.
    """
    if out_h < 1 or out_w < 1:
        raise ContractError(f"invalid resize target {out_h}x{out_w}")
    t, h, w, c = frames.shape
    work = frames.astype(np.float64)

    def axis_interp(arr, n_in, n_out, axis):
        x = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
        x = np.clip(x, 0.0, n_in - 1)
        lo = np.floor(x).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = x - lo
        shape = [1, 1, 1, 1]
        shape[axis] = n_out
        frac = frac.reshape(shape)
        return (np.take(arr, lo, axis=axis) * (1.0 - frac)
                + np.take(arr, hi, axis=axis) * frac)

    work = axis_interp(work, h, out_h, axis=1)
    work = axis_interp(work, w, out_w, axis=2)
    if np.issubdtype(frames.dtype, np.integer):
        return np.rint(work).astype(frames.dtype)
    return work.astype(frames.dtype)


def variant_resize(clip: VideoClip, target_side: int) -> FragmentBatch:
    """Baseline: bilinear resize of every frame to target_side**2."""
    frags = resize_bilinear(clip.frames, target_side, target_side)
    spec = GridSpec(grid_count=1, patch_size=target_side, frames=clip.num_frames)
    return FragmentBatch(fragments=frags, plan=None, variant="resize", spec=spec)


def variant_crop(clip: VideoClip, target_side: int, seed: int) -> FragmentBatch:
    """Baseline: one seeded random crop, the same window in every frame."""
    h, w = clip.height, clip.width
    if target_side > min(h, w):
        raise ContractError(
            f"crop side {target_side} exceeds frame {h}x{w}")
    rng = _rng(seed)
    r0 = int(rng.integers(0, h - target_side, endpoint=True))
    c0 = int(rng.integers(0, w - target_side, endpoint=True))
    frags = clip.frames[:, r0:r0 + target_side, c0:c0 + target_side].copy()
    spec = GridSpec(grid_count=1, patch_size=target_side, frames=clip.num_frames)
    plan = SamplingPlan(
        offsets=np.array([[[r0, c0]]], dtype=np.int64),
        grid_bounds=np.array([[[0, h, 0, w]]], dtype=np.int64),
        rng_seed=seed)
    return FragmentBatch(fragments=frags, plan=plan, variant="crop", spec=spec)


def upscale_if_needed(clip: VideoClip, spec: GridSpec) -> VideoClip:
    """Opt-in rescue for frames too small for the grid: bilinearly enlarge
    each deficient side to exactly ``grid_count * patch_size`` so the
    smallest grid admits one patch. Feasible clips pass through untouched.
    """
    side = spec.output_side
    if clip.height >= side and clip.width >= side:
        return clip
    new_h = max(clip.height, side)
    new_w = max(clip.width, side)
    frames = resize_bilinear(clip.frames, new_h, new_w)
    return VideoClip(frames=frames, fps=clip.fps, source_id=clip.source_id)


def sample_variant(clip: VideoClip, spec: GridSpec, variant: str, seed: int,
                   pre_upscale: bool = False) -> FragmentBatch:
    """Dispatch a named sampler variant at the spec's output side.

    Selects ``spec.frames`` frames first if the clip is longer or
    shorter. ``pre_upscale`` opts into enlarging sub-grid-size frames
    instead of raising; it is off by default because resampling breaks
    the raw-patch guarantee.
    """
    clip = select_count(clip, spec.frames)
    if pre_upscale and variant != "resize":
        clip = upscale_if_needed(clip, spec)
    if variant == "gms":
        return sample_gms(clip, spec, seed)
    if variant == "unaligned":
        return variant_unaligned(clip, spec, seed)
    if variant == "random_minipatch":
        return variant_random_minipatches(clip, spec, seed)
    if variant == "shuffled":
        return variant_shuffled(clip, spec, seed)
    if variant == "resize":
        return variant_resize(clip, spec.output_side)
    if variant == "crop":
        return variant_crop(clip, spec.output_side, seed)
    raise ContractError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def select_count(clip: VideoClip, frames: int) -> VideoClip:
    if clip.num_frames == frames:
        return clip
    from .media import select_frames

    return select_frames(clip, frames)


# --- fragment batch interchange -------------------------------------------

FRAG_MAGIC = b"FRB1"
_FRAG_HEADER = struct.Struct("<4sHBBIIIIq")


def save_fragments(batch: FragmentBatch, path) -> None:
    """Serialize a fragment batch: header, plan arrays, raw payload.

    Round trips are bit-exact, including the plan and any per-frame
    offsets or splice permutation.
    """
    if batch.fragments.dtype != np.uint8:
        raise ContractError("fragment interchange stores uint8 payloads")
    t, _, _, c = batch.fragments.shape
    spec = batch.spec
    seed = batch.plan.rng_seed if batch.plan is not None else -1
    flags = 0
    if batch.plan is not None:
        flags |= 1
        if batch.plan.frame_offsets is not None:
            flags |= 2
        if batch.plan.splice_perm is not None:
            flags |= 4
    buf = io.BytesIO()
    buf.write(_FRAG_HEADER.pack(FRAG_MAGIC, 1, VARIANTS.index(batch.variant), flags,
                                t, spec.grid_count, spec.patch_size, c, seed))
    if batch.plan is not None:
        buf.write(np.ascontiguousarray(batch.plan.grid_bounds, dtype=np.int64).tobytes())
        buf.write(np.ascontiguousarray(batch.plan.offsets, dtype=np.int64).tobytes())
        if batch.plan.frame_offsets is not None:
            buf.write(np.ascontiguousarray(batch.plan.frame_offsets, dtype=np.int64).tobytes())
        if batch.plan.splice_perm is not None:
            buf.write(np.ascontiguousarray(batch.plan.splice_perm, dtype=np.int64).tobytes())
    buf.write(np.ascontiguousarray(batch.fragments).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_fragments(path) -> FragmentBatch:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, variant_idx, flags, t, g, s, c, seed = \
        _FRAG_HEADER.unpack_from(data, 0)
    if magic != FRAG_MAGIC or version != 1:
        raise ContractError(f"{path}: not a fragment batch file")
    variant = VARIANTS[variant_idx]
    pos = _FRAG_HEADER.size
    plan = None
    if flags & 1:
        pg = g
        bounds = np.frombuffer(data, np.int64, pg * pg * 4, pos).reshape(pg, pg, 4)
        pos += bounds.nbytes
        offsets = np.frombuffer(data, np.int64, pg * pg * 2, pos).reshape(pg, pg, 2)
        pos += offsets.nbytes
        frame_offsets = None
        if flags & 2:
            frame_offsets = np.frombuffer(data, np.int64, t * pg * pg * 2, pos) \
                .reshape(t, pg, pg, 2)
            pos += frame_offsets.nbytes
        perm = None
        if flags & 4:
            perm = np.frombuffer(data, np.int64, pg * pg, pos).copy()
            pos += perm.nbytes
        plan = SamplingPlan(offsets=offsets.copy(), grid_bounds=bounds.copy(),
                            rng_seed=seed,
                            frame_offsets=None if frame_offsets is None else frame_offsets.copy(),
                            splice_perm=perm)
    side = g * s
    frags = np.frombuffer(data, np.uint8, t * side * side * c, pos) \
        .reshape(t, side, side, c).copy()
    spec = GridSpec(grid_count=g, patch_size=s, frames=t)
    return FragmentBatch(fragments=frags, plan=plan, variant=variant, spec=spec)
