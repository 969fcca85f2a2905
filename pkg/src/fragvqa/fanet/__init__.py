"""Fragment attention network: config presets, backbone, gated position
biases, the regress-then-pool head, checkpoints, and prediction."""

from .attention import BiasTables, WindowAttention, grpb_attention, rpb_attention
from .backbone import FANet
from .checkpoint import load_checkpoint, save_checkpoint
from .config import FanetConfig, preset, preset_names
from .gating import build_gate_mask, relative_position_index
from .head import IpNlrHead, pool_quality_map, regress_quality
from .quality import (QualityOutput, export_quality_map, fragments_to_tensor,
                      predict, read_quality_record)

__all__ = [
    "BiasTables", "FANet", "FanetConfig", "IpNlrHead", "QualityOutput",
    "WindowAttention", "build_gate_mask", "export_quality_map",
    "fragments_to_tensor", "grpb_attention", "load_checkpoint",
    "pool_quality_map", "predict", "preset", "preset_names",
    "read_quality_record", "regress_quality", "relative_position_index",
    "rpb_attention", "save_checkpoint",
]
