"""Backbone configuration and the shipped scale presets.

The network is a four-stage hierarchical windowed-attention transformer
over fragment inputs. Spatial resolution halves between stages (the
temporal extent never shrinks after patch embedding), so the feature-
space side of one source mini-patch halves per stage too; the final
stage sees exactly one feature position per mini-patch for every
shipped preset.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..errors import ConfigurationError

N_STAGES = 4


@dataclass(frozen=True)
class FanetConfig:
    """Geometry and width of the fragment attention network.

    ``window`` is (w_t, w_h, w_w); a window side larger than the stage's
    feature map is clamped to the map (and that dimension is never
    shifted). ``grpb_stages`` switches the gated dual-table position
    bias per stage; a disabled stage falls back to a single shared
    table.
    """

    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    heads: tuple = (3, 6, 12, 24)
    window: tuple = (8, 7, 7)
    patch_embed_stride: tuple = (2, 4, 4)
    mlp_ratio: float = 4.0
    frames: int = 32
    grid_count: int = 7
    patch_size: int = 32
    in_channels: int = 3
    grpb_stages: tuple = (True, True, True, True)
    name: str = "full"

    def __post_init__(self):
        self.validate()

    # --- derived geometry --------------------------------------------------

    @property
    def input_shape(self) -> tuple:
        """(T, H, W, C) fragment shape this config expects."""
        side = self.grid_count * self.patch_size
        return (self.frames, side, side, self.in_channels)

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim * (2 ** stage)

    def spatial_stride(self, stage: int) -> int:
        """Cumulative source-pixel stride of one feature position."""
        return self.patch_embed_stride[1] * (2 ** stage)

    def minipatch_feature_side(self, stage: int) -> int:
        """Feature-space side of one source mini-patch at this stage."""
        return self.patch_size // self.spatial_stride(stage)

    def feature_shape(self, stage: int) -> tuple:
        t = self.frames // self.patch_embed_stride[0]
        side = (self.grid_count * self.patch_size) // self.spatial_stride(stage)
        return (t, side, side)

    def effective_window(self, stage: int) -> tuple:
        """Window clamped to the stage's feature extent per dimension."""
        feat = self.feature_shape(stage)
        return tuple(min(w, f) for w, f in zip(self.window, feat))

    def shift_size(self, stage: int) -> tuple:
        """Half-window shift for alternating blocks; zero where the
        window already spans the whole dimension."""
        feat = self.feature_shape(stage)
        return tuple(0 if w >= f else w // 2
                     for w, f in zip(self.window, feat))

    @property
    def map_shape(self) -> tuple:
        """(t', G_out, G_out) of the emitted quality map."""
        t, side, _ = self.feature_shape(N_STAGES - 1)
        mp = self.minipatch_feature_side(N_STAGES - 1)
        return (t, side // mp, side // mp)

    # --- validation --------------------------------------------------------

    def validate(self) -> None:
        problems = []
        for fld, val in (("depths", self.depths), ("heads", self.heads)):
            if len(val) != N_STAGES:
                problems.append(f"{fld} must have {N_STAGES} entries, got {len(val)}")
        if len(self.window) != 3 or any(w < 1 for w in self.window):
            problems.append(f"window must be 3 positive sides, got {self.window}")
        if len(self.patch_embed_stride) != 3 or any(s < 1 for s in self.patch_embed_stride):
            problems.append(f"patch_embed_stride must be 3 positive strides, "
                            f"got {self.patch_embed_stride}")
        if self.patch_embed_stride[1] != self.patch_embed_stride[2]:
            problems.append("spatial embed strides must match (square patches)")
        for v, fld in ((self.embed_dim, "embed_dim"), (self.frames, "frames"),
                       (self.grid_count, "grid_count"), (self.patch_size, "patch_size"),
                       (self.in_channels, "in_channels")):
            if v < 1:
                problems.append(f"{fld} must be >= 1, got {v}")
        if len(self.grpb_stages) != N_STAGES:
            problems.append(f"grpb_stages must have {N_STAGES} switches")
        if not problems:
            for s in range(N_STAGES):
                dim, h = self.stage_dim(s), self.heads[s]
                if h < 1 or dim % h:
                    problems.append(f"stage {s}: dim {dim} not divisible by {h} heads")
                if self.patch_size % self.spatial_stride(s):
                    problems.append(
                        f"stage {s}: mini-patch side {self.patch_size} not divisible "
                        f"by cumulative stride {self.spatial_stride(s)}")
        if problems:
            raise ConfigurationError("invalid config: " + "; ".join(problems))

    def validate_input(self, shape: tuple) -> None:
        """Check a fragment shape (T, H, W, C) against every divisibility
        this geometry needs; raises listing all failures at once."""
        t, h, w, c = shape
        st, sh, sw = self.patch_embed_stride
        problems = []
        if c != self.in_channels:
            problems.append(f"channels {c} != configured {self.in_channels}")
        if (t, h, w) != self.input_shape[:3]:
            problems.append(f"fragments {(t, h, w)} do not match configured "
                            f"{self.input_shape[:3]}")
        if t % st:
            problems.append(f"frames {t} not divisible by temporal stride {st}")
        if h % sh or w % sw:
            problems.append(f"sides {h}x{w} not divisible by embed stride {sh}")
        if not problems:
            for s in range(N_STAGES):
                feat = self.feature_shape(s)
                eff = self.effective_window(s)
                for d, (f, wd) in enumerate(zip(feat, eff)):
                    if f % wd:
                        problems.append(
                            f"stage {s}: feature extent {f} (dim {d}) not "
                            f"divisible by window {wd}")
                if s < N_STAGES - 1 and (feat[1] % 2 or feat[2] % 2):
                    problems.append(f"stage {s}: feature side {feat[1]}x{feat[2]} "
                                    f"not even for downsampling")
        if problems:
            raise ConfigurationError("incompatible input: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FanetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("depths", "heads", "window", "patch_embed_stride", "grpb_stages"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


_PRESETS = {
    "full": FanetConfig(),
    "mobile": FanetConfig(window=(4, 4, 4), frames=16, grid_count=4, name="mobile"),
    "tiny": FanetConfig(embed_dim=32, depths=(1, 1, 1, 1), heads=(1, 2, 2, 4),
                        window=(2, 4, 4), frames=8, grid_count=2, name="tiny"),
}


def preset(which: str, **overrides) -> FanetConfig:
    """Fetch a shipped scale preset, optionally overriding fields
    (``name`` itself may be overridden to label the derived config)."""
    if which not in _PRESETS:
        raise ConfigurationError(
            f"unknown preset {which!r}; choose from {sorted(_PRESETS)}")
    cfg = _PRESETS[which]
    return replace(cfg, **overrides) if overrides else cfg


def preset_names() -> list:
    return sorted(_PRESETS)
