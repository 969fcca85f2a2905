"""Windowed self-attention with gated dual-table relative position
biases.

Each window position pair (i, j) receives a learned additive bias
selected by the intra-patch gate: pairs inside the same source
mini-patch read the real-position table, pairs crossing mini-patch
boundaries read the pseudo-position table. Both tables are indexed by
the pair's coordinate difference and start at zero, so an untrained
network is exactly standard scaled-dot-product attention.

``rpb_attention`` is a deliberately separate single-table reference
path; equivalence tests compare the gated path against it rather than
reusing shared code.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContractError
from .gating import relative_position_index, table_size


class BiasTables(nn.Module):
    """Two independent learnable bias tables over relative positions.

    ``real_table`` serves intra-patch pairs (true relative positions in
    source pixels); ``pseudo_table`` serves cross-patch pairs whose
    on-fragment offsets do not correspond to source-pixel offsets. Both
    are zero-initialized and shaped (table_size, heads).
    """

    def __init__(self, window, heads: int):
        super().__init__()
        self.window = tuple(window)
        self.heads = heads
        size = table_size(window)
        self.real_table = nn.Parameter(torch.zeros(size, heads))
        self.pseudo_table = nn.Parameter(torch.zeros(size, heads))
        self.register_buffer("index_map", relative_position_index(window),
                             persistent=False)

    def biases(self):
        """Materialize (heads, N, N) bias matrices from both tables."""
        n = self.index_map.shape[0]
        idx = self.index_map.reshape(-1)
        real = self.real_table[idx].view(n, n, self.heads).permute(2, 0, 1)
        pseudo = self.pseudo_table[idx].view(n, n, self.heads).permute(2, 0, 1)
        return real, pseudo


def _attend(scores: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    return F.softmax(scores, dim=-1) @ v


def grpb_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                   tables: BiasTables, gate: torch.Tensor,
                   shift_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Gated-bias window attention core.

    q, k, v: (..., heads, N, head_dim); gate: boolean, broadcastable to
    the (..., heads, N, N) score shape after an unsqueeze before the
    head axis. Scores are q @ k^T / sqrt(head_dim) plus the gate-selected
    bias (real where the gate is true, pseudo elsewhere); masked pairs
    get a large negative addend before the row softmax.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ContractError(f"q/k/v shapes differ: {q.shape} {k.shape} {v.shape}")
    n = q.shape[-2]
    if tables.index_map.shape[0] != n:
        raise ContractError(
            f"tables are for windows of {tables.index_map.shape[0]} positions, got {n}")
    if gate.shape[-2:] != (n, n):
        raise ContractError(f"gate shape {tuple(gate.shape)} does not end in ({n}, {n})")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    real, pseudo = tables.biases()
    bias = torch.where(gate.unsqueeze(-3), real, pseudo)
    scores = scores + bias
    if shift_mask is not None:
        scores = scores + shift_mask.unsqueeze(-3) * -100.0
    return _attend(scores, v)


def rpb_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                  table: torch.Tensor, index_map: torch.Tensor,
                  shift_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Standard single-table relative-position-bias attention (the
    reference the gated path degenerates to when its tables are tied)."""
    n = index_map.shape[0]
    heads = table.shape[1]
    bias = table[index_map.reshape(-1)].view(n, n, heads).permute(2, 0, 1)
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]) + bias
    if shift_mask is not None:
        scores = scores + shift_mask.unsqueeze(-3) * -100.0
    return _attend(scores, v)


class WindowAttention(nn.Module):
    """Multi-head attention over partitioned windows.

    ``use_grpb=False`` drops the gate and applies ``real_table`` alone,
    reproducing the standard bias scheme (the per-stage ablation switch).
    """

    def __init__(self, dim: int, heads: int, window, use_grpb: bool = True):
        super().__init__()
        if dim % heads:
            raise ContractError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.use_grpb = use_grpb
        self.tables = BiasTables(window, heads)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, windows: torch.Tensor, gate: torch.Tensor,
                shift_mask: torch.Tensor | None, batch: int) -> torch.Tensor:
        """windows: (batch * num_windows, N, C); gate: (num_windows, N, N)
        boolean; shift_mask: (num_windows, N, N) boolean or None."""
        bw, n, c = windows.shape
        num_windows = bw // batch
        qkv = self.qkv(windows).view(bw, n, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)  # each (bw, heads, n, d)
        q = q.view(batch, num_windows, self.heads, n, c // self.heads)
        k = k.view_as(q)
        v = v.view_as(q)
        if self.use_grpb:
            out = grpb_attention(q, k, v, self.tables, gate, shift_mask)
        else:
            out = rpb_attention(q, k, v, self.tables.real_table,
                                self.tables.index_map, shift_mask)
        out = out.reshape(bw, self.heads, n, c // self.heads)
        out = out.transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)
