"""Single-file checkpoints: config + named parameter tensors.

Loading reconstructs the model from the embedded config and verifies
the stored tensors against it name by name; any mismatch fails with a
diff listing missing, unexpected, and shape-changed parameters instead
of a bare size error.
"""

from __future__ import annotations

import torch

from ..errors import CheckpointError
from .backbone import FANet
from .config import FanetConfig

FORMAT_VERSION = 1


def save_checkpoint(model: FANet, path, meta: dict | None = None) -> None:
    torch.save({
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        "meta": dict(meta or {}),
    }, path)


def load_checkpoint(path, map_location: str = "cpu"):
    """Returns (model, meta); the model is rebuilt from the stored config
    with the stored weights loaded."""
    try:
        blob = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if not isinstance(blob, dict) or "state_dict" not in blob or "config" not in blob:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if blob.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format {blob.get('format_version')} != {FORMAT_VERSION}")
    cfg = FanetConfig.from_dict(blob["config"])
    model = FANet(cfg)
    diff = state_dict_diff(model.state_dict(), blob["state_dict"])
    if diff:
        raise CheckpointError(f"{path}: checkpoint does not fit the model:\n" + diff)
    model.load_state_dict(blob["state_dict"])
    return model, blob.get("meta", {})


def state_dict_diff(expected: dict, stored: dict) -> str:
    """Human-readable named diff; empty string when compatible."""
    lines = []
    for name in sorted(set(expected) - set(stored)):
        lines.append(f"  missing: {name} {tuple(expected[name].shape)}")
    for name in sorted(set(stored) - set(expected)):
        lines.append(f"  unexpected: {name} {tuple(stored[name].shape)}")
    for name in sorted(set(expected) & set(stored)):
        if tuple(expected[name].shape) != tuple(stored[name].shape):
            lines.append(f"  shape mismatch: {name} expects "
                         f"{tuple(expected[name].shape)}, checkpoint has "
                         f"{tuple(stored[name].shape)}")
    return "\n".join(lines)
