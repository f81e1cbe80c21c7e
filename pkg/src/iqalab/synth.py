"""Procedural test imagery.

`make_reference_image` builds the deterministic RGB texture card that
the distortion monotonicity contract is checked on; the same pixels are
shipped as ``data/reference.png`` so the image is both reproducible from
code and loadable as a file.  It mixes gradients, gratings, blobs, hard
edges and fine grain so that every distortion family has something to
bite on, carries real chroma for the color families, and keeps its mean
away from 0.5 so mean-shift is never a no-op.

`make_source_images` produces small varied textures of the same flavour
for corpus generation in tests and experiments.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .raster import Raster
from .rng import RngStream

REFERENCE_SIZE = 96


def _grating(yy, xx, fy, fx, phase):
    return np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phase)


def _blob(yy, xx, cy, cx, radius):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2))


def make_reference_image(size: int = REFERENCE_SIZE) -> Raster:
    """Deterministic richly textured RGB raster (identical on every call)."""
    rng = RngStream(0x1A6E, 7)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)

    r = 0.30 + 0.30 * xx + 0.05 * yy
    g = 0.42 + 0.12 * yy - 0.08 * xx
    b = 0.36 + 0.18 * (1.0 - xx) * yy

    r = r + 0.07 * _grating(yy, xx, 7.0, 3.0, 0.0)
    g = g + 0.06 * _grating(yy, xx, -5.0, 13.0, 1.0)
    b = b + 0.05 * _grating(yy, xx, 11.0, -7.0, 2.0)

    r = r + 0.22 * _blob(yy, xx, 0.30, 0.25, 0.10) - 0.18 * _blob(yy, xx, 0.75, 0.70, 0.14)
    g = g + 0.20 * _blob(yy, xx, 0.65, 0.30, 0.12) - 0.15 * _blob(yy, xx, 0.25, 0.80, 0.09)
    b = b + 0.24 * _blob(yy, xx, 0.50, 0.55, 0.08) - 0.12 * _blob(yy, xx, 0.85, 0.20, 0.11)

    # high-contrast checker patch for the blur and compression families
    cell = max(2, size // 16)
    checker = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2)
    region = (yy > 0.62) & (xx > 0.62)
    for ch in (r, g, b):
        ch[region] = 0.30 + 0.45 * checker[region]

    # hard-edged rectangle and disk
    rect = (yy > 0.10) & (yy < 0.24) & (xx > 0.08) & (xx < 0.45)
    r[rect], g[rect], b[rect] = 0.85, 0.25, 0.20
    disk = (yy - 0.78) ** 2 + (xx - 0.18) ** 2 < 0.006
    r[disk], g[disk], b[disk] = 0.15, 0.30, 0.80

    # broadband grain, lightly smoothed so it is not pure white noise
    grain = rng.normal(size=(3, size, size))
    grain = ndimage.gaussian_filter(grain, sigma=(0, 0.8, 0.8))
    data = np.stack([r, g, b]) + 0.035 * grain

    return Raster(np.clip(data, 0.02, 0.98))


def make_source_images(count: int, size: int, rng: RngStream) -> list[Raster]:
    """Varied deterministic textures for corpus sweeps (RGB, given size)."""
    if count < 1 or size < 16:
        raise ValueError("need count >= 1 and size >= 16")
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    out = []
    for i in range(count):
        r = rng.child("img", i)
        chans = []
        base = r.uniform(0.25, 0.65, 3)
        tilt = r.uniform(-0.3, 0.3, (3, 2))
        for c in range(3):
            plane = base[c] + tilt[c, 0] * xx + tilt[c, 1] * yy
            for _ in range(2):
                fy, fx = r.uniform(-12.0, 12.0, 2)
                plane = plane + r.uniform(0.03, 0.09) * _grating(yy, xx, fy, fx, r.uniform(0, 2 * np.pi))
            for _ in range(2):
                cy, cx = r.uniform(0.1, 0.9, 2)
                plane = plane + r.uniform(-0.25, 0.25) * _blob(yy, xx, cy, cx, r.uniform(0.05, 0.2))
            chans.append(plane)
        data = np.stack(chans)
        grain = ndimage.gaussian_filter(r.normal(size=(3, size, size)), sigma=(0, 0.7, 0.7))
        data = data + 0.03 * grain
        out.append(Raster(np.clip(data, 0.02, 0.98)))
    return out
