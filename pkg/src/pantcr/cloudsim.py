"""Thin-cloud scattering and reduced-resolution (Wald) degradation.

A cloud attenuates the surface signal by ``t = exp(-k(lambda) * d)`` and adds
airlight ``L(lambda) * (1 - t)``.  Extinction follows the power law
``k(lambda) = k0 * (lambda / lambda0) ** -q``, so longer wavelengths (NIR)
are attenuated less than blue.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .noise import fractal_noise
from .raster import MultiBandRaster, SamplePair

MORPHOLOGIES = ("stratiform", "cumuliform", "wispy", "banded")

# Octave weights, first-octave cell (fraction of the larger image side),
# anisotropy, coverage threshold and contrast exponent for each morphology.
_PRESETS = {
    "stratiform": dict(weights=(1.0, 0.45, 0.2), cell=0.9, anisotropy=1.3, threshold=0.0, gamma=1.0),
    "cumuliform": dict(weights=(1.0, 0.7, 0.35, 0.15), cell=0.35, anisotropy=1.0, threshold=0.3, gamma=0.8),
    "wispy": dict(weights=(0.6, 1.0, 0.6, 0.3), cell=0.5, anisotropy=4.0, threshold=0.2, gamma=1.3),
    "banded": dict(weights=(1.0, 0.5, 0.25), cell=0.4, anisotropy=1.0, threshold=0.0, gamma=1.0),
}


@dataclass(frozen=True)
class CloudField:
    depth_map: np.ndarray
    k0: float = 1.0
    lambda0_nm: float = 550.0
    q: float = 1.3
    airlight: float = 0.85
    airlight_tilt: float = 0.0
    morphology: str = "stratiform"
    thickness_scale: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.depth_map, dtype=np.float64)
        if d.ndim != 2:
            raise ValidationError(f"depth map must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValidationError("depth map must be finite and non-negative")
        if self.k0 <= 0 or self.lambda0_nm <= 0 or self.q < 0:
            raise ValidationError("extinction law needs k0 > 0, lambda0 > 0, q >= 0")
        object.__setattr__(self, "depth_map", d)

    def extinction(self, wavelength_nm) -> np.ndarray:
        wl = np.asarray(wavelength_nm, dtype=np.float64)
        return self.k0 * (wl / self.lambda0_nm) ** (-self.q)

    def airlight_at(self, wavelength_nm) -> np.ndarray:
        """Airlight per wavelength; a positive tilt brightens shorter wavelengths."""
        wl = np.asarray(wavelength_nm, dtype=np.float64)
        return np.clip(self.airlight + self.airlight_tilt * (self.lambda0_nm - wl) / self.lambda0_nm, 0.0, 1.0)

    def transmittance(self, wavelength_nm) -> np.ndarray:
        """H x W x len(wavelengths) transmittance grid."""
        k = np.atleast_1d(self.extinction(wavelength_nm))
        return np.exp(-self.depth_map[:, :, None] * k[None, None, :])

    def downsample(self, r: int) -> "CloudField":
        """Block-average the depth map so a coarser sensor sees the same cloud."""
        h, w = self.depth_map.shape
        if h % r or w % r:
            raise ValueError(f"depth map {h}x{w} not divisible by {r}")
        d = self.depth_map.reshape(h // r, r, w // r, r).mean(axis=(1, 3))
        return replace(self, depth_map=d)


def scatter_array(clean: np.ndarray, wavelengths, cloud: CloudField) -> np.ndarray:
    """Unclipped ``clean * t + L * (1 - t)`` on an H x W x C array."""
    t = cloud.transmittance(wavelengths)
    lum = cloud.airlight_at(wavelengths)
    return clean * t + lum[None, None, :] * (1.0 - t)


def apply_scattering(clean: MultiBandRaster, cloud: CloudField) -> MultiBandRaster:
    if not clean.band_wavelengths_nm or len(clean.band_wavelengths_nm) != clean.c:
        raise ValidationError("band wavelengths are required to apply scattering")
    if cloud.depth_map.shape != (clean.h, clean.w):
        raise ValidationError(
            f"depth map {cloud.depth_map.shape} does not match raster {clean.h}x{clean.w}"
        )
    out = scatter_array(clean.data.astype(np.float64), clean.band_wavelengths_nm, cloud)
    return clean.replace(np.clip(out, 0.0, 1.0))


def generate_cloud_field(
    seed: int,
    morphology: str,
    thickness_scale: float,
    dims,
    **law,
) -> CloudField:
    """Deterministic depth map in [0, thickness_scale] for one of the four morphologies.

    Extra keyword arguments (``k0``, ``lambda0_nm``, ``q``, ``airlight``,
    ``airlight_tilt``) override the extinction/airlight defaults.
    """
    if morphology not in _PRESETS:
        raise ValueError(f"unknown morphology {morphology!r}; expected one of {MORPHOLOGIES}")
    if thickness_scale < 0:
        raise ValueError("thickness_scale must be non-negative")
    h, w = dims
    if h < 1 or w < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    p = _PRESETS[morphology]
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0, np.pi)
    cell = max(p["cell"] * max(h, w), 2.0)
    n = fractal_noise((h, w), rng, cell, p["weights"], p["anisotropy"], angle)
    if morphology == "banded":
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        period = max(h, w) / rng.uniform(2.0, 4.0)
        phase = 2 * np.pi * ((xx * np.cos(angle) + yy * np.sin(angle)) / period + 1.5 * n)
        n = 0.35 + 0.65 * (0.5 + 0.5 * np.sin(phase)) * (0.6 + 0.4 * n)
    d = np.clip((n - p["threshold"]) / (1.0 - p["threshold"]), 0.0, 1.0) ** p["gamma"]
    peak = d.max()
    if peak > 0:
        d = d / peak
    return CloudField(
        d * thickness_scale,
        morphology=morphology,
        thickness_scale=float(thickness_scale),
        **law,
    )


# -------------------------------------------------------------- Wald degradation


@lru_cache(maxsize=32)
def gaussian_decimation_matrix(n_in: int, r: int) -> np.ndarray:
    """(n_in/r, n_in) matrix: Gaussian blur (sigma = r/pi) sampled at LR pixel centers."""
    sigma = r / np.pi
    n_out = n_in // r
    radius = max(int(np.ceil(4 * sigma)), 1)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = i * r + (r - 1) / 2.0
        taps = np.arange(int(np.floor(center)) - radius, int(np.ceil(center)) + radius + 1)
        w = np.exp(-0.5 * ((taps - center) / sigma) ** 2)
        idx = np.mod(taps, 2 * n_in)
        idx = np.where(idx >= n_in, 2 * n_in - 1 - idx, idx)
        np.add.at(mat[i], idx, w)
        mat[i] /= mat[i].sum()
    mat.setflags(write=False)
    return mat


def decimate_array(arr: np.ndarray, r: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if r < 1 or h % r or w % r:
        raise ValueError(f"image {h}x{w} is not divisible by ratio {r}")
    dy = gaussian_decimation_matrix(h, r)
    dx = gaussian_decimation_matrix(w, r)
    return np.einsum("ij,jkc,lk->ilc", dy, arr.astype(np.float64), dx, optimize=True)


def wald_degrade(clean_hrmsi: MultiBandRaster, clean_hr_pan: MultiBandRaster, r: int):
    """Blur + decimate both inputs by ``r``; returns ``(lrmsi, lr_pan)``."""
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ValueError(f"ratio must be a positive integer, got {r!r}")
    out = []
    for img in (clean_hrmsi, clean_hr_pan):
        if img.h % r or img.w % r:
            raise ValueError(f"image {img.h}x{img.w} is not divisible by ratio {r}")
        out.append(img.replace(np.clip(decimate_array(img.data, r), 0, 1), gsd_m=img.gsd_m * r))
    return out[0], out[1]


def make_sample(
    clean_hrmsi: MultiBandRaster,
    clean_pan: MultiBandRaster,
    cloud_seed: int,
    thickness_scale: float,
    r: int = 4,
    morphology: str | None = None,
    sample_id: str = "",
    **law,
) -> SamplePair:
    """Cloud both sensors with one physical cloud field and reduce the MSI by ``r``."""
    if (clean_hrmsi.h, clean_hrmsi.w) != (clean_pan.h, clean_pan.w):
        raise ValidationError("HR-MSI and PAN must be spatially aligned")
    if morphology is None:
        morphology = MORPHOLOGIES[np.random.default_rng(cloud_seed).integers(len(MORPHOLOGIES))]
    cloud = generate_cloud_field(cloud_seed, morphology, thickness_scale, (clean_pan.h, clean_pan.w), **law)
    clean_lr, _ = wald_degrade(clean_hrmsi, clean_pan, r)
    cloudy_pan = apply_scattering(clean_pan, cloud)
    cloudy_lr = apply_scattering(clean_lr, cloud.downsample(r))
    tags = {"cloud_seed": str(cloud_seed), "morphology": morphology, "thickness": repr(float(thickness_scale))}
    return SamplePair(
        cloudy_lrmsi=cloudy_lr.replace(cloudy_lr.data, tags={**cloudy_lr.tags, **tags}),
        cloudy_pan=cloudy_pan.replace(cloudy_pan.data, tags={**cloudy_pan.tags, **tags}),
        clean_hrmsi=clean_hrmsi,
        scale_ratio=int(r),
        id=sample_id,
        clean_lrmsi=clean_lr,
        clean_pan=clean_pan,
    )
