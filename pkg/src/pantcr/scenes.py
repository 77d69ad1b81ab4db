"""Procedural clean scenes: piecewise-smooth land-cover mosaics with correlated spectra.

Band order is Blue, Green, Red, NIR with GaoFen-2-like center wavelengths.
The PAN band is a fixed weighted sum of the four bands at the same resolution.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .noise import fractal_noise
from .raster import MultiBandRaster

MSI_WAVELENGTHS_NM = (485.0, 555.0, 660.0, 830.0)
PAN_WAVELENGTH_NM = 675.0
PAN_WEIGHTS = np.array([0.15, 0.30, 0.30, 0.25])

# surface reflectance (B, G, R, NIR)
LAND_COVER = {
    "water": (0.07, 0.06, 0.04, 0.02),
    "forest": (0.03, 0.06, 0.04, 0.35),
    "cropland": (0.05, 0.10, 0.07, 0.42),
    "bare_soil": (0.12, 0.16, 0.21, 0.28),
    "urban": (0.17, 0.18, 0.19, 0.23),
}


def generate_scene(seed: int, h: int, w: int, gsd_m: float = 1.0, n_regions: int | None = None):
    """Return ``(hrmsi, pan)`` rasters of size h x w for the given seed."""
    rng = np.random.default_rng(seed)
    if n_regions is None:
        n_regions = max(4, int(h * w / 96 ** 2))
    names = list(LAND_COVER)
    spectra = np.array([LAND_COVER[n] for n in names])

    # domain-warped Voronoi mosaic gives irregular field boundaries
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    warp = 0.08 * max(h, w)
    wy = (fractal_noise((h, w), rng, cell=max(h, w) / 4) - 0.5) * 2 * warp
    wx = (fractal_noise((h, w), rng, cell=max(h, w) / 4) - 0.5) * 2 * warp
    sites = rng.uniform([0, 0], [h, w], size=(n_regions, 2))
    _, label = cKDTree(sites).query(np.stack([(yy + wy).ravel(), (xx + wx).ravel()], axis=1))
    label = label.reshape(h, w)

    region_class = rng.integers(0, len(names), size=n_regions)
    region_gain = rng.uniform(0.8, 1.25, size=(n_regions, 1))
    region_tint = rng.normal(0.0, 0.015, size=(n_regions, 4))
    region_spec = np.clip(spectra[region_class] * region_gain + region_tint, 0.01, 0.9)
    img = region_spec[label]

    # within-field texture, shared across bands so spectra stay correlated
    texture = fractal_noise((h, w), rng, cell=24.0, weights=(1.0, 0.6, 0.35))
    img = img * (0.8 + 0.4 * texture)[:, :, None]
    fine = fractal_noise((h, w), rng, cell=4.0, weights=(1.0, 0.5))
    img = img * (0.94 + 0.12 * fine)[:, :, None]

    # a few straight roads
    for _ in range(rng.integers(1, 4)):
        angle = rng.uniform(0, np.pi)
        offset = rng.uniform(-0.4, 0.4) * max(h, w)
        width = rng.uniform(1.5, 3.5)
        dist = np.abs((xx - w / 2) * np.sin(angle) - (yy - h / 2) * np.cos(angle) - offset)
        mask = np.clip(width - dist, 0.0, 1.0)[:, :, None]
        img = img * (1 - mask) + np.array(LAND_COVER["urban"]) * 1.3 * mask

    img = np.clip(img, 0.0, 1.0)
    pan = np.clip(img @ PAN_WEIGHTS, 0.0, 1.0)
    tags = {"source": "procedural", "seed": str(seed)}
    hrmsi = MultiBandRaster(img, MSI_WAVELENGTHS_NM, gsd_m=gsd_m, tags=tags)
    pan_r = MultiBandRaster(pan[:, :, None], (PAN_WAVELENGTH_NM,), gsd_m=gsd_m, tags=tags)
    return hrmsi, pan_r
