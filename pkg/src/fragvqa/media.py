"""Clip ingestion: decoding, the raw interchange format, temporal frame
selection, and dataset manifests.

Two decode paths exist: the package's own raw interchange format (used for
synthetic corpora and tests; bit-exact by construction) and OpenCV's
``VideoCapture`` for everything else.

Raw interchange format (``.rvc``), little-endian:

    magic   4s   b"RVC1"
    version u16  currently 1
    T,H,W,C u32  frame count, height, width, channels
    fps     f64
    id_len  u32  length of UTF-8 source id
    id      id_len bytes
    payload T*H*W*C bytes, uint8, row-major (t, h, w, c)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DecodeError, EmptyClipError

RAW_MAGIC = b"RVC1"
RAW_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIdI")


@dataclass
class VideoClip:
    """A decoded frame stack of shape (T, H, W, C) plus source metadata.

    Frames are uint8 (0..255) or floating point in [0, 1]; the
    representation must be consistent across the clip.
    """

    frames: np.ndarray
    fps: float = 30.0
    source_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 3:  # implicit single channel
            f = f[..., None]
        if f.ndim != 4:
            raise ContractError(f"frames must be (T, H, W, C), got shape {f.shape}")
        t, h, w, c = f.shape
        if t < 1 or h < 1 or w < 1 or c < 1:
            raise ContractError(f"degenerate clip dimensions {f.shape}")
        if f.dtype == np.uint8:
            pass
        elif np.issubdtype(f.dtype, np.floating):
            if f.size and (float(f.min()) < 0.0 or float(f.max()) > 1.0):
                raise ContractError("float clips must have pixel values in [0, 1]")
        else:
            raise ContractError(f"unsupported pixel dtype {f.dtype}")
        self.frames = f

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]


@dataclass
class SyntheticLabel:
    """Pseudo quality score plus the distortion magnitudes that produced it.

    ``mos`` is a strictly decreasing function of total degradation; see
    :func:`fragvqa.synth.mos_from_degradation` for the formula.
    """

    mos: float
    degradation: dict = field(default_factory=dict)


def save_clip(clip: VideoClip, path: str | os.PathLike) -> None:
    """Write a clip in the raw interchange format (uint8 payloads only)."""
    frames = clip.frames
    if frames.dtype != np.uint8:
        raise ContractError("raw interchange stores uint8 payloads; convert first")
    t, h, w, c = frames.shape
    sid = clip.source_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RAW_MAGIC, RAW_VERSION, t, h, w, c, float(clip.fps), len(sid)))
        fh.write(sid)
        fh.write(np.ascontiguousarray(frames).tobytes())


def _load_raw(path) -> VideoClip:
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise DecodeError(f"{path}: truncated header")
            magic, version, t, h, w, c, fps, id_len = _HEADER.unpack(head)
            if magic != RAW_MAGIC:
                raise DecodeError(f"{path}: bad magic {magic!r}")
            if version != RAW_VERSION:
                raise DecodeError(f"{path}: unsupported version {version}")
            sid = fh.read(id_len).decode("utf-8")
            payload = fh.read(t * h * w * c)
            if len(payload) != t * h * w * c:
                raise DecodeError(f"{path}: truncated payload")
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if t == 0:
        raise EmptyClipError(f"{path}: zero frames")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(t, h, w, c)
    return VideoClip(frames=frames.copy(), fps=fps, source_id=sid)


def _load_opencv(path) -> VideoClip:
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"{path}: cannot open")
    fps = cap.get(cv2.CAP_PROP_FPS) or 30.0
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1])  # BGR -> RGB
    cap.release()
    if not frames:
        raise EmptyClipError(f"{path}: zero frames")
    return VideoClip(frames=np.stack(frames), fps=float(fps),
                     source_id=os.path.basename(str(path)))


def load_clip(path: str | os.PathLike) -> VideoClip:
    """Decode a clip from disk.

    ``.rvc`` files use the raw interchange reader; anything else goes
    through OpenCV. Raises :class:`DecodeError` for unreadable inputs and
    :class:`EmptyClipError` when no frame decodes.
    """
    if not os.path.exists(path):
        raise DecodeError(f"{path}: no such file")
    if str(path).endswith(".rvc"):
        return _load_raw(path)
    return _load_opencv(path)


def select_frames(clip: VideoClip, count: int) -> VideoClip:
    """Select ``count`` frames at uniformly spaced indices.

    Index k maps to round(k * (T_src - 1) / (count - 1)) with round-half-to-
    even; a single requested frame takes index 0, and sources shorter than
    ``count`` repeat frames. Identity when ``count == T_src``.
    """
    if count < 1:
        raise ContractError(f"frame count must be >= 1, got {count}")
    t_src = clip.num_frames
    if count == 1:
        idx = np.zeros(1, dtype=np.int64)
    else:
        k = np.arange(count, dtype=np.float64)
        idx = np.rint(k * (t_src - 1) / (count - 1)).astype(np.int64)
    return VideoClip(frames=clip.frames[idx].copy(), fps=clip.fps,
                     source_id=clip.source_id)


@dataclass
class ManifestRecord:
    path: str
    mos: float
    split: str


def write_manifest(records: list[ManifestRecord], path: str | os.PathLike) -> None:
    """Write a dataset manifest: one tab-delimited record per line.

    Columns are ``path<TAB>mos<TAB>split``; lines starting with ``#`` are
    comments. Paths are stored as given (relative paths resolve against the
    manifest's directory on read).
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# fragvqa manifest v1: path\tmos\tsplit\n")
        for rec in records:
            fh.write(f"{rec.path}\t{rec.mos!r}\t{rec.split}\n")


def read_manifest(path: str | os.PathLike) -> list[ManifestRecord]:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigurationError(f"{path}:{ln}: expected 3 fields, got {len(parts)}")
            p, mos, split = parts
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            records.append(ManifestRecord(path=p, mos=float(mos), split=split))
    return records
