"""Quality regression head: positionwise nonlinear regression first,
pooling second.

Every final-stage feature vector is regressed to a scalar by two shared
pointwise linear layers with a GELU between them; the per-position
scalars are then averaged within each mini-patch cell to give the
quality map, and the score is the mean of the map. Regressing before
pooling is what makes the per-patch map meaningful; pooling first would
collapse local quality evidence before the nonlinearity sees it.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ContractError


class IpNlrHead(nn.Module):
    """Two pointwise linear layers (hidden width = input width) with a
    smooth nonlinearity, shared across all positions."""

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, 1)

    def positionwise(self, feats: torch.Tensor) -> torch.Tensor:
        """(..., C) -> (...): per-position quality before any pooling."""
        return self.fc2(self.act(self.fc1(feats))).squeeze(-1)

    def forward(self, feats: torch.Tensor, minipatch_side: int):
        return regress_quality(self, feats, minipatch_side)


def pool_quality_map(pos: torch.Tensor, minipatch_side: int) -> torch.Tensor:
    """Average per-position scores within each mini-patch cell.

    pos: (B, T', H', W') -> (B, T', H'/mp, W'/mp). When mp == 1 the map
    is the positionwise field itself (no arithmetic at all), so the
    score/map/positionwise identities hold bit-exactly.
    """
    mp = minipatch_side
    b, t, h, w = pos.shape
    if mp < 1:
        raise ContractError(f"minipatch side must be >= 1, got {mp}")
    if h % mp or w % mp:
        raise ContractError(
            f"feature sides {h}x{w} not divisible by mini-patch side {mp}")
    if mp == 1:
        return pos
    return pos.view(b, t, h // mp, mp, w // mp, mp).mean(dim=(3, 5))


def regress_quality(head: IpNlrHead, feats: torch.Tensor, minipatch_side: int):
    """(B, T', H', W', C) -> (scores (B,), quality maps (B, T', G, G)).

    The score is the arithmetic mean of the quality map. With mp == 1
    (every shipped preset) the map aliases the positionwise field, so
    the score equals the mean of the positionwise regressions exactly.
    """
    if feats.ndim != 5:
        raise ContractError(f"expected (B, T', H', W', C), got {tuple(feats.shape)}")
    pos = head.positionwise(feats)
    qmap = pool_quality_map(pos, minipatch_side)
    scores = qmap.mean(dim=(1, 2, 3))
    return scores, qmap
