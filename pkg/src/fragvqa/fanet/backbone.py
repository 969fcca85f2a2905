"""The fragment attention network backbone.

Four stages of windowed spatiotemporal attention blocks over patch-
embedded fragments. Spatial resolution halves between stages while the
temporal extent is kept; alternating blocks use cyclically shifted
windows. Every attention layer carries the gated dual-table position
bias keyed by the intra-patch gate of its window phase.

Input convention: (B, C, T, H, W) float tensors, already normalized
(see :func:`fragvqa.fanet.quality.fragments_to_tensor`). Output:
per-sample scalar scores and (t', G, G) quality maps.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ContractError
from .attention import WindowAttention
from .config import N_STAGES, FanetConfig
from .gating import (shift_attn_mask, stage_gate_masks, window_partition,
                     window_reverse)
from .head import IpNlrHead, regress_quality


class PatchEmbed3D(nn.Module):
    """Non-overlapping spatiotemporal patch embedding: a strided 3-D
    convolution followed by layer norm over channels."""

    def __init__(self, in_channels: int, embed_dim: int, stride):
        super().__init__()
        self.stride = tuple(stride)
        self.proj = nn.Conv3d(in_channels, embed_dim, kernel_size=self.stride,
                              stride=self.stride)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, T, H, W) -> (B, T', H', W', C')."""
        x = self.proj(x).permute(0, 2, 3, 4, 1)
        return self.norm(x)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class PatchMerging(nn.Module):
    """Spatial 2x2 downsampling between stages: concatenate the four
    spatial neighbors, normalize, and project 4C -> 2C. Temporal extent
    is untouched."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ContractError(f"cannot merge odd feature sides {h}x{w}")
        x = torch.cat([x[:, :, 0::2, 0::2], x[:, :, 1::2, 0::2],
                       x[:, :, 0::2, 1::2], x[:, :, 1::2, 1::2]], dim=-1)
        return self.reduction(self.norm(x))


class FanetBlock(nn.Module):
    """Pre-norm windowed attention + MLP with residuals; ``shift`` is
    the cyclic displacement of this block's window phase."""

    def __init__(self, dim: int, heads: int, window, shift, use_grpb: bool,
                 mlp_ratio: float):
        super().__init__()
        self.window = tuple(window)
        self.shift = tuple(shift)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, use_grpb=use_grpb)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: torch.Tensor, gate: torch.Tensor,
                shift_mask: torch.Tensor | None) -> torch.Tensor:
        b, t, h, w, _ = x.shape
        shortcut = x
        x = self.norm1(x)
        if any(self.shift):
            x = torch.roll(x, shifts=tuple(-s for s in self.shift), dims=(1, 2, 3))
        windows = window_partition(x, self.window)
        windows = self.attn(windows, gate, shift_mask, batch=b)
        x = window_reverse(windows, self.window, b, (t, h, w))
        if any(self.shift):
            x = torch.roll(x, shifts=self.shift, dims=(1, 2, 3))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class FANet(nn.Module):
    """Fragment attention network: backbone plus regress-then-pool head.

    Construction is deterministic given ``seed``. Gate and shift masks
    depend only on the configured geometry, so they are precomputed per
    (stage, phase) at construction and moved to the input's device on
    use.
    """

    def __init__(self, cfg: FanetConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        torch.manual_seed(seed)

        self.patch_embed = PatchEmbed3D(cfg.in_channels, cfg.embed_dim,
                                        cfg.patch_embed_stride)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        self._masks = {}  # (stage, shifted) -> (gate bool, shift mask or None)
        for s in range(N_STAGES):
            dim = cfg.stage_dim(s)
            window = cfg.effective_window(s)
            shift = cfg.shift_size(s)
            feat = cfg.feature_shape(s)
            mp = cfg.minipatch_feature_side(s)
            blocks = nn.ModuleList()
            for b in range(cfg.depths[s]):
                blk_shift = shift if b % 2 else (0, 0, 0)
                blocks.append(FanetBlock(dim, cfg.heads[s], window, blk_shift,
                                         cfg.grpb_stages[s], cfg.mlp_ratio))
            self.stages.append(blocks)
            if s < N_STAGES - 1:
                self.merges.append(PatchMerging(dim))
            self._masks[(s, False)] = (
                stage_gate_masks(feat, window, mp), None)
            if any(shift) and cfg.depths[s] > 1:
                self._masks[(s, True)] = (
                    stage_gate_masks(feat, window, mp, shift=shift),
                    shift_attn_mask(feat, window, shift))

        c_last = cfg.stage_dim(N_STAGES - 1)
        self.norm = nn.LayerNorm(c_last)
        self.head = IpNlrHead(c_last)
        self.apply(_init_weights)

    def _phase_masks(self, stage: int, shifted: bool, device):
        gate, mask = self._masks[(stage, shifted)]
        gate = gate.to(device)
        if mask is not None:
            mask = mask.to(device)
        return gate, mask

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, T, H, W) -> normalized final features (B, T', H', W', C)."""
        if x.ndim != 5:
            raise ContractError(f"expected (B, C, T, H, W), got {tuple(x.shape)}")
        b, c, t, h, w = x.shape
        self.cfg.validate_input((t, h, w, c))
        x = self.patch_embed(x)
        for s, blocks in enumerate(self.stages):
            for bi, block in enumerate(blocks):
                shifted = bool(bi % 2) and any(block.shift)
                gate, mask = self._phase_masks(s, shifted, x.device)
                x = block(x, gate, mask)
            if s < N_STAGES - 1:
                x = self.merges[s](x)
        return self.norm(x)

    def forward(self, x: torch.Tensor):
        """Returns (scores (B,), quality maps (B, t', G, G))."""
        feats = self.features(x)
        mp = self.cfg.minipatch_feature_side(N_STAGES - 1)
        return regress_quality(self.head, feats, mp)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _init_weights(module: nn.Module) -> None:
    """Truncated-normal(std 0.02) projections, zero biases, unit norms;
    bias tables keep their zero init so a fresh network is exactly
    ungated attention."""
    if isinstance(module, (nn.Linear, nn.Conv3d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
