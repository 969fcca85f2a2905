"""Synthetic labeled clip generation for desk-scale training and testing.

Each clip is a textured scene with a slow global pan, degraded by a
localized Gaussian blur, localized additive noise, and an optional global
inter-frame shake (random per-frame camera jitter). The pseudo-MOS is a
documented monotone decreasing function of the degradation magnitudes:

    mos = 5 - (w_blur * sigma_hat + w_noise * n_hat + w_shake * s_hat)

where each hatted magnitude is the drawn value divided by the top of its
profile range (0 when the range is empty) and the weights sum to 4, so
scores live on a 1..5 scale; the result is clamped to [1, 5].

Generation is a pure function of (n, seed, profile, geometry): every
random draw comes from per-clip generators spawned off one SeedSequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigurationError, ContractError
from .media import SyntheticLabel, VideoClip

MOS_MAX = 5.0
MOS_MIN = 1.0
_WEIGHT_SUM = 4.0


@dataclass(frozen=True)
class DistortionProfile:
    """Ranges the per-clip distortion magnitudes are drawn from.

    ``blur_region`` / ``noise_region`` bound the degraded area as a
    fraction of each frame side. ``weights`` are (blur, noise, shake) and
    must sum to 4 so a maximally degraded clip scores exactly 1.
    """

    blur_sigma: tuple[float, float] = (0.0, 3.0)
    noise_std: tuple[float, float] = (0.0, 24.0)
    shake_amp: tuple[float, float] = (0.0, 5.0)
    blur_region: tuple[float, float] = (0.45, 0.8)
    noise_region: tuple[float, float] = (0.45, 0.8)
    weights: tuple[float, float, float] = (2.0, 1.0, 1.0)

    def validate(self) -> None:
        for name in ("blur_sigma", "noise_std", "shake_amp", "blur_region", "noise_region"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi):
                raise ConfigurationError(f"profile.{name}: need 0 <= lo <= hi, got ({lo}, {hi})")
        for name in ("blur_region", "noise_region"):
            if getattr(self, name)[1] > 1.0:
                raise ConfigurationError(f"profile.{name}: fractions must be <= 1")
        if any(w < 0 for w in self.weights):
            raise ConfigurationError("profile.weights must be non-negative")
        if abs(sum(self.weights) - _WEIGHT_SUM) > 1e-9:
            raise ConfigurationError(
                f"profile.weights must sum to {_WEIGHT_SUM}, got {sum(self.weights)}")

    @classmethod
    def zero(cls) -> "DistortionProfile":
        """No degradation at all; every clip scores exactly MOS_MAX."""
        return cls(blur_sigma=(0.0, 0.0), noise_std=(0.0, 0.0), shake_amp=(0.0, 0.0))

    @classmethod
    def blur_only(cls) -> "DistortionProfile":
        """Quality signal carried purely by localized blur."""
        return cls(noise_std=(0.0, 0.0), shake_amp=(0.0, 0.0),
                   weights=(4.0, 0.0, 0.0))


def mos_from_degradation(profile: DistortionProfile, blur_sigma: float,
                         noise_std: float, shake_amp: float) -> float:
    """The documented monotone pseudo-MOS formula."""
    def hat(value, rng):
        return value / rng[1] if rng[1] > 0 else 0.0

    wb, wn, ws = profile.weights
    penalty = (wb * hat(blur_sigma, profile.blur_sigma)
               + wn * hat(noise_std, profile.noise_std)
               + ws * hat(shake_amp, profile.shake_amp))
    return float(np.clip(MOS_MAX - penalty, MOS_MIN, MOS_MAX))


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Pan-ready scene texture in [0,1]: coarse shading, 2px-block detail,
    and a handful of sharp rectangles."""
    coarse = rng.uniform(0.15, 0.85, (h // 16 + 2, w // 16 + 2))
    coarse = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_LINEAR)
    blocks = rng.uniform(0.0, 1.0, ((h + 1) // 2, (w + 1) // 2))
    fine = np.repeat(np.repeat(blocks, 2, axis=0), 2, axis=1)[:h, :w]
    img = 0.45 * coarse + 0.55 * fine
    for _ in range(10):
        rh = int(rng.integers(h // 16, h // 4))
        rw = int(rng.integers(w // 16, w // 4))
        r0 = int(rng.integers(0, h - rh))
        c0 = int(rng.integers(0, w - rw))
        img[r0:r0 + rh, c0:c0 + rw] = rng.uniform(0.0, 1.0)
    return img


def _soft_region_mask(rng: np.random.Generator, h: int, w: int,
                      frac_range: tuple[float, float]) -> np.ndarray:
    """Feathered rectangular mask in [0,1] covering a random sub-region."""
    fh = rng.uniform(*frac_range)
    fw = rng.uniform(*frac_range)
    rh = max(2, int(round(fh * h)))
    rw = max(2, int(round(fw * w)))
    r0 = int(rng.integers(0, h - rh + 1))
    c0 = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=np.float64)
    mask[r0:r0 + rh, c0:c0 + rw] = 1.0
    return cv2.GaussianBlur(mask, (0, 0), 3.0)


def _render_clip(rng: np.random.Generator, frames: int, h: int, w: int,
                 blur_sigma: float, noise_std: float, shake_amp: float,
                 blur_frac: tuple[float, float],
                 noise_frac: tuple[float, float]) -> np.ndarray:
    margin = frames + int(np.ceil(shake_amp)) + 2
    canvas = _texture(rng, h + 2 * margin, w + 2 * margin)
    gains = rng.uniform(0.7, 1.0, 3)
    vy, vx = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))

    # Frame-anchored degradation regions, shared by all frames.
    blur_mask = _soft_region_mask(rng, h, w, blur_frac)[..., None]
    noise_mask = _soft_region_mask(rng, h, w, noise_frac)[..., None]

    amp = int(round(shake_amp))
    jitter = rng.integers(-amp, amp + 1, (frames, 2)) if amp > 0 else np.zeros((frames, 2), np.int64)

    out = np.empty((frames, h, w, 3), dtype=np.uint8)
    for t in range(frames):
        oy = margin + vy * t + int(jitter[t, 0])
        ox = margin + vx * t + int(jitter[t, 1])
        gray = canvas[oy:oy + h, ox:ox + w]
        frame = gray[..., None] * gains[None, None, :]
        if blur_sigma > 0:
            blurred = cv2.GaussianBlur(frame, (0, 0), blur_sigma)
            frame = blur_mask * blurred + (1.0 - blur_mask) * frame
        if noise_std > 0:
            noise = rng.normal(0.0, noise_std / 255.0, frame.shape)
            frame = frame + noise_mask * noise
        out[t] = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    return out


def synthesize_corpus(n: int, seed: int, profile: DistortionProfile | None = None,
                      frames: int = 8, height: int = 192, width: int = 192,
                      fps: float = 24.0) -> list[tuple[VideoClip, SyntheticLabel]]:
    """Generate ``n`` labeled clips, deterministically from ``seed``.

    Distortions apply in the documented order blur -> noise -> shake
    (shake realizes as per-frame window jitter on the panning canvas, so
    no wrap seams appear). Returns (clip, label) pairs in generation
    order; label.degradation records the drawn magnitudes.
    """
    if n < 1:
        raise ContractError(f"corpus size must be >= 1, got {n}")
    if frames < 1 or height < 32 or width < 32:
        raise ContractError(f"degenerate corpus geometry ({frames}, {height}, {width})")
    profile = profile or DistortionProfile()
    profile.validate()

    corpus = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.Generator(np.random.PCG64(child))
        sigma = float(rng.uniform(*profile.blur_sigma))
        noise = float(rng.uniform(*profile.noise_std))
        shake = float(rng.uniform(*profile.shake_amp))
        pixels = _render_clip(rng, frames, height, width, sigma, noise, shake,
                              profile.blur_region, profile.noise_region)
        clip = VideoClip(frames=pixels, fps=fps, source_id=f"synth-{seed}-{i:05d}")
        label = SyntheticLabel(
            mos=mos_from_degradation(profile, sigma, noise, shake),
            degradation={"blur_sigma": sigma, "noise_std": noise, "shake_amp": shake},
        )
        corpus.append((clip, label))
    return corpus
