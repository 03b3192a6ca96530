"""Exposure-adjusted image (EAI) synthesis.

A night-time image is re-exposed through a camera response model at a
ladder of exposure ratios e, e^2, ..., e^K, and the ladder is fused into
a single brighter image by per-pixel well-exposedness weighting. The
fused ladder loop has a compiled fast path (nightiqa._eai_fast) with a
vectorized NumPy fallback; both produce identical results.
"""

from dataclasses import dataclass

import numpy as np

try:
    from . import _eai_fast

    HAVE_FAST_KERNEL = True
except ImportError:
    _eai_fast = None
    HAVE_FAST_KERNEL = False

# Gaussian well-exposedness: peak at 0.5, sigma 0.2
_WELL_EXPOSED_SIGMA = 0.2


@dataclass(frozen=True)
class CameraResponseParams:
    alpha: float = -0.3293
    beta: float = 1.1258
    base_ratio: float = 2.4
    ladder_size: int = 4

    def __post_init__(self):
        if self.base_ratio <= 1.0:
            raise ValueError(f"base_ratio must be > 1, got {self.base_ratio}")
        if self.ladder_size < 1:
            raise ValueError(f"ladder_size must be >= 1, got {self.ladder_size}")


def camera_response(image, ratio, params=CameraResponseParams()):
    """Re-expose a [0,1] image at the given exposure ratio.

    E(I, r) = I^(r^alpha) * r^(beta*(1 - r^alpha)), clamped to [0,1].
    ratio=1 is the identity.
    """
    if ratio <= 0:
        raise ValueError(f"exposure ratio must be positive, got {ratio}")
    image = np.asarray(image)
    gain = ratio ** params.alpha
    out = image ** gain * ratio ** (params.beta * (1.0 - gain))
    return np.clip(out, 0.0, 1.0)


def exposure_ladder(image, params=CameraResponseParams()):
    """The K re-exposures at ratios e^1 .. e^K."""
    return [
        camera_response(image, params.base_ratio ** k, params)
        for k in range(1, params.ladder_size + 1)
    ]


def well_exposedness(values):
    """Per-element fusion weight, peaking at mid-tone 0.5."""
    return np.exp(-((values - 0.5) ** 2) / (2.0 * _WELL_EXPOSED_SIGMA**2))


def fuse_exposures(ladder):
    """Per-pixel convex combination of the ladder, weighted by
    well-exposedness."""
    if not ladder:
        raise ValueError("empty exposure ladder")
    shapes = {np.asarray(img).shape for img in ladder}
    if len(shapes) != 1:
        raise ValueError(f"ladder shape mismatch: {sorted(shapes)}")
    stack = np.stack([np.asarray(img, dtype=np.float64) for img in ladder])
    weights = well_exposedness(stack)
    return np.clip((weights * stack).sum(axis=0) / weights.sum(axis=0), 0.0, 1.0)


def make_eai(image, params=CameraResponseParams(), use_fast=None):
    """Synthesize the exposure-adjusted image for a night-time input.

    use_fast: None selects the compiled kernel when available; True/False
    force a path (True raises if the extension is missing).
    """
    image = np.asarray(image)
    if use_fast is None:
        use_fast = HAVE_FAST_KERNEL
    if use_fast:
        if not HAVE_FAST_KERNEL:
            raise RuntimeError("compiled EAI kernel is not available")
        flat = np.ascontiguousarray(image, dtype=np.float64).ravel()
        out = _eai_fast.fused_eai(
            flat, params.alpha, params.beta, params.base_ratio, params.ladder_size
        )
        return out.reshape(image.shape)
    return fuse_exposures(exposure_ladder(image, params))


def eai_cache_path(image_path):
    """Cached EAIs live next to their inputs as <stem>.eai.png."""
    from pathlib import Path

    p = Path(image_path)
    return p.with_name(p.stem + ".eai.png")
