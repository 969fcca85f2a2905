"""Analytic multiply-accumulate model of the network's forward pass.

Counts are a pure function of the configuration and the input tensor
shape; no tensors are allocated. Every layer contributes one named
entry; the report's total is exactly the sum of the entries.

Conventions, documented in every report header:

* one multiply-accumulate = 1 unit; totals are reported in G (1e9)
* ``total``: every MAC of one forward pass at batch 1, including the
  attention score/value matmuls, bias additions, and normalizations
* ``dense_total``: the dense sublayers only (convolution and linear
  projections), batch 1
* ``comparable_total``: ``dense_total * 4``, a batch-of-four dense-only
  accounting; this is the figure to quote when comparing against
  externally reported costs for these geometries

Inputs whose feature maps do not divide the window or merge geometry
are priced with ceil padding (pad-to-multiple), matching how a padded
forward would behave; the shipped presets need no padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import ContractError
from ..fanet.config import N_STAGES, FanetConfig


@dataclass
class FlopsEntry:
    name: str
    macs: int
    dense: bool  # counts toward the dense-only figure


@dataclass
class FlopsReport:
    input_shape: tuple
    entries: list = field(default_factory=list)

    def add(self, name: str, macs: float, dense: bool = False) -> None:
        self.entries.append(FlopsEntry(name, int(round(macs)), dense))

    @property
    def total(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def dense_total(self) -> int:
        return sum(e.macs for e in self.entries if e.dense)

    @property
    def comparable_total(self) -> int:
        return 4 * self.dense_total

    def as_text(self) -> str:
        lines = [
            "# fragvqa flops report v1",
            "# unit: multiply-accumulates (MACs); 1G = 1e9",
            f"# input\t{self.input_shape}",
            "layer\tmacs\tdense",
        ]
        for e in self.entries:
            lines.append(f"{e.name}\t{e.macs}\t{int(e.dense)}")
        lines.append(f"total\t{self.total}\t-")
        lines.append(f"dense_total\t{self.dense_total}\t-")
        lines.append(f"comparable_total\t{self.comparable_total}\t-"
                     "\t# dense layers, batch of 4")
        return "\n".join(lines) + "\n"


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def flops_count(cfg: FanetConfig, input_shape: tuple | None = None) -> FlopsReport:
    """Per-layer MAC model for a forward pass over ``input_shape``
    fragments (defaults to the configuration's own input shape)."""
    if input_shape is None:
        input_shape = cfg.input_shape
    t, h, w, c_in = input_shape
    if min(t, h, w, c_in) < 1:
        raise ContractError(f"degenerate input shape {input_shape}")
    if c_in != cfg.in_channels:
        raise ContractError(f"input channels {c_in} != configured {cfg.in_channels}")
    st, sh, sw = cfg.patch_embed_stride
    report = FlopsReport(input_shape=tuple(input_shape))

    # patch embedding: strided conv + channel norm
    ft = _ceil_div(t, st)
    fh, fw = _ceil_div(h, sh), _ceil_div(w, sw)
    tokens = ft * fh * fw
    kernel = c_in * st * sh * sw
    report.add("patch_embed.proj", tokens * kernel * cfg.embed_dim, dense=True)
    report.add("patch_embed.norm", tokens * cfg.embed_dim)

    for s in range(N_STAGES):
        dim = cfg.stage_dim(s)
        tokens = ft * fh * fw
        window = tuple(min(wd, f) for wd, f in zip(cfg.window, (ft, fh, fw)))
        n = window[0] * window[1] * window[2]
        n_windows = (_ceil_div(ft, window[0]) * _ceil_div(fh, window[1])
                     * _ceil_div(fw, window[2]))
        heads = cfg.heads[s]
        for b in range(cfg.depths[s]):
            pre = f"stage{s}.block{b}"
            report.add(f"{pre}.norm1", tokens * dim)
            report.add(f"{pre}.attn.qkv", tokens * dim * 3 * dim, dense=True)
            report.add(f"{pre}.attn.qk", n_windows * n * n * dim)
            report.add(f"{pre}.attn.bias", n_windows * heads * n * n)
            report.add(f"{pre}.attn.av", n_windows * n * n * dim)
            report.add(f"{pre}.attn.proj", tokens * dim * dim, dense=True)
            report.add(f"{pre}.norm2", tokens * dim)
            hidden = int(dim * cfg.mlp_ratio)
            report.add(f"{pre}.mlp", tokens * dim * hidden * 2, dense=True)
        if s < N_STAGES - 1:
            fh, fw = _ceil_div(fh, 2), _ceil_div(fw, 2)
            out_tokens = ft * fh * fw
            report.add(f"merge{s}.norm", out_tokens * 4 * dim)
            report.add(f"merge{s}.reduction", out_tokens * 4 * dim * 2 * dim,
                       dense=True)

    c_last = cfg.stage_dim(N_STAGES - 1)
    tokens = ft * fh * fw
    report.add("norm", tokens * c_last)
    report.add("head.fc1", tokens * c_last * c_last, dense=True)
    report.add("head.fc2", tokens * c_last, dense=True)
    return report
