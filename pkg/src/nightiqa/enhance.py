"""Two-parameter night-time enhancement stand-in for the tuning demo.

A gamma-based illumination-map enhancer: the per-pixel illumination
estimate (channel max) is gamma-compressed with exponent g and floored
at l, and the image is divided by the adjusted map. Defaults g=0.6,
l=0.2. An external enhancer can be substituted via a subprocess hook in
the CLI.
"""

import shlex
import subprocess

import numpy as np

DEFAULT_GAMMA = 0.6
DEFAULT_LIFT = 0.2


def enhance_image(image, g=DEFAULT_GAMMA, l=DEFAULT_LIFT):
    """Brighten a [0,1] RGB image with illumination-map parameters (g, l)."""
    image = np.asarray(image, dtype=np.float64)
    illum = image.max(axis=2, keepdims=True)
    adjusted = np.maximum(illum**g, l)
    return np.clip(image / adjusted, 0.0, 1.0)


def run_enhancer_command(template, g, l, in_path, out_path):
    """Run an external enhancer; the template's {g} {l} {in} {out}
    placeholders are substituted per grid point."""
    argv = [
        token.format(g=g, l=l, **{"in": str(in_path), "out": str(out_path)})
        for token in shlex.split(template)
    ]
    subprocess.run(argv, check=True)
