"""Window geometry: relative-position indexing, intra-patch gate masks,
and shifted-window attention masks.

The gate is the boolean pair relation "both window positions lie in the
same source mini-patch". Membership is purely spatial: two positions in
different frames but the same spatial cell are intra-patch, because the
aligned sampler guarantees they come from the same source region.
Membership of a window position is computed from its absolute feature
coordinate (window origin plus local offset); for shifted blocks the
cyclic roll is undone modulo the feature extent so membership always
refers to true source coordinates.
"""

from __future__ import annotations

import torch

from ..errors import ContractError


def table_size(window) -> int:
    wt, wh, ww = window
    return (2 * wt - 1) * (2 * wh - 1) * (2 * ww - 1)


def relative_position_index(window) -> torch.Tensor:
    """(N, N) map from a window position pair to its bias-table row.

    Two pairs share a row exactly when their coordinate differences are
    equal componentwise; rows enumerate all (2w-1) differences per axis.
    """
    wt, wh, ww = window
    coords = torch.stack(torch.meshgrid(
        torch.arange(wt), torch.arange(wh), torch.arange(ww), indexing="ij"))
    flat = coords.flatten(1)  # (3, N)
    rel = (flat[:, :, None] - flat[:, None, :]).permute(1, 2, 0).contiguous()
    rel[..., 0] += wt - 1
    rel[..., 1] += wh - 1
    rel[..., 2] += ww - 1
    rel[..., 0] *= (2 * wh - 1) * (2 * ww - 1)
    rel[..., 1] *= 2 * ww - 1
    return rel.sum(-1)


def _local_coords(window) -> torch.Tensor:
    wt, wh, ww = window
    grids = torch.meshgrid(torch.arange(wt), torch.arange(wh), torch.arange(ww),
                           indexing="ij")
    return torch.stack([g.flatten() for g in grids], dim=-1)  # (N, 3)


def build_gate_mask(window_origin, window, minipatch_side: int,
                    shift=(0, 0, 0), extent=None) -> torch.Tensor:
    """(N, N) boolean intra-patch gate for one window.

    Entry (i, j) is true iff positions i and j fall in the same spatial
    mini-patch cell: floor(abs_h / mp) and floor(abs_w / mp) both match,
    where abs coordinates are origin + local offset (+ shift, wrapped to
    ``extent``, for cyclically shifted blocks). The temporal axis never
    splits membership.
    """
    if minipatch_side < 1:
        raise ContractError(f"minipatch_side must be >= 1, got {minipatch_side}")
    local = _local_coords(window)
    origin = torch.as_tensor(window_origin, dtype=torch.long)
    absolute = local + origin + torch.as_tensor(shift, dtype=torch.long)
    if extent is not None:
        absolute = absolute % torch.as_tensor(extent, dtype=torch.long)
    cells = absolute[:, 1:] // minipatch_side  # spatial membership only
    return (cells[:, None, :] == cells[None, :, :]).all(-1)


def window_origins(feature_shape, window) -> list:
    """Origins of the regular window partition, in partition order."""
    for f, w in zip(feature_shape, window):
        if f % w:
            raise ContractError(
                f"feature extent {feature_shape} not divisible by window {window}")
    ft, fh, fw = feature_shape
    wt, wh, ww = window
    return [(t, h, w)
            for t in range(0, ft, wt)
            for h in range(0, fh, wh)
            for w in range(0, fw, ww)]


def stage_gate_masks(feature_shape, window, minipatch_side: int,
                     shift=(0, 0, 0)) -> torch.Tensor:
    """(num_windows, N, N) gates for every window of a stage, stacked in
    partition order (matching window_partition below)."""
    masks = [build_gate_mask(o, window, minipatch_side, shift=shift,
                             extent=feature_shape)
             for o in window_origins(feature_shape, window)]
    return torch.stack(masks)


def shift_attn_mask(feature_shape, window, shift) -> torch.Tensor | None:
    """(num_windows, N, N) boolean mask of cross-region pairs created by
    the cyclic shift; None when nothing is shifted.

    Rolled feature maps place spatially non-adjacent content into the
    same window; pairs whose region labels differ must not attend to
    each other.
    """
    if not any(shift):
        return None
    ft, fh, fw = feature_shape
    labels = torch.zeros((ft, fh, fw), dtype=torch.long)
    cnt = 0
    for ts in _region_slices(ft, window[0], shift[0]):
        for hs in _region_slices(fh, window[1], shift[1]):
            for ws in _region_slices(fw, window[2], shift[2]):
                labels[ts, hs, ws] = cnt
                cnt += 1
    win = window_partition(labels[None, ..., None].float(), window)[..., 0].long()
    return win[:, :, None] != win[:, None, :]


def _region_slices(extent, window, shift):
    if shift == 0:
        return [slice(0, extent)]
    return [slice(0, extent - window), slice(extent - window, extent - shift),
            slice(extent - shift, extent)]


def window_partition(x: torch.Tensor, window) -> torch.Tensor:
    """(B, T, H, W, C) -> (B * num_windows, N, C), windows in partition
    order (t-major, then h, then w) within each batch element."""
    b, t, h, w, c = x.shape
    wt, wh, ww = window
    x = x.view(b, t // wt, wt, h // wh, wh, w // ww, ww, c)
    x = x.permute(0, 1, 3, 5, 2, 4, 6, 7).contiguous()
    return x.view(-1, wt * wh * ww, c)


def window_reverse(windows: torch.Tensor, window, batch, feature_shape) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    t, h, w = feature_shape
    wt, wh, ww = window
    c = windows.shape[-1]
    x = windows.view(batch, t // wt, h // wh, w // ww, wt, wh, ww, c)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7).contiguous()
    return x.view(batch, t, h, w, c)
