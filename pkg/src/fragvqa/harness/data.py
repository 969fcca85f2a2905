"""Dataset plumbing: deterministic splits, clip loading, and sampler
invocation for training and evaluation."""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ConfigurationError
from ..media import ManifestRecord, load_clip
from ..sampling import FragmentBatch, GridSpec, sample_variant

SPLIT_NAMES = ("train", "val", "test")


def split_rank(source_id: str) -> str:
    """Stable per-id rank key: the hex digest of the id."""
    return hashlib.sha256(source_id.encode("utf-8")).hexdigest()


def make_splits(source_ids, proportions=(0.7, 0.15, 0.15)) -> dict:
    """Deterministic id -> split assignment.

    Ids are ranked by their hash digest and assigned to train/val/test
    in rank order at the requested proportions, so the split is a pure
    function of the id set and the counts match the proportions to
    within rounding.
    """
    if len(proportions) != 3 or any(p < 0 for p in proportions):
        raise ConfigurationError(f"need 3 non-negative proportions, got {proportions}")
    total = sum(proportions)
    if total <= 0:
        raise ConfigurationError("split proportions sum to zero")
    ids = list(source_ids)
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate source ids in split input")
    ranked = sorted(ids, key=split_rank)
    n = len(ranked)
    b1 = int(round(n * proportions[0] / total))
    b2 = b1 + int(round(n * proportions[1] / total))
    b2 = min(b2, n)
    out = {}
    for rank, sid in enumerate(ranked):
        out[sid] = "train" if rank < b1 else ("val" if rank < b2 else "test")
    return out


class ClipDataset:
    """Manifest-backed clip collection for one split.

    Clips decode lazily and stay cached in memory; corpora here are
    desk-scale by design.
    """

    def __init__(self, records: list[ManifestRecord], split: str | None = None):
        if split is not None and split not in SPLIT_NAMES:
            raise ConfigurationError(f"unknown split {split!r}; use {SPLIT_NAMES}")
        self.records = [r for r in records if split is None or r.split == split]
        self._cache = {}

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int):
        rec = self.records[idx]
        if rec.path not in self._cache:
            self._cache[rec.path] = load_clip(rec.path)
        return self._cache[rec.path], rec.mos


def sample_input(clip, spec: GridSpec, variant: str, seed: int,
                 pre_upscale: bool = False) -> FragmentBatch:
    """One sampler invocation; exists so training, evaluation, and the
    CLI share a single entry point into the sampler."""
    return sample_variant(clip, spec, variant, seed, pre_upscale=pre_upscale)


def derive_seed(*parts) -> int:
    """Deterministic child seed from structured parts (base seed, video
    index, repeat index, ...)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])
