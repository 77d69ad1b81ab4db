"""Amplitude/phase decomposition of multi-channel images and the contrast high-pass filter.

All transforms use orthonormal scaling (``1/sqrt(HW)`` forward and inverse),
so the energy of a signal equals the energy of its amplitude spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import NumericError, ValidationError
from .raster import MultiBandRaster


@dataclass
class FrequencyPair:
    amplitude: np.ndarray
    phase: np.ndarray
    origin_dims: tuple

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValidationError(
                f"amplitude {self.amplitude.shape} and phase {self.phase.shape} differ"
            )
        if tuple(self.amplitude.shape[:2]) != tuple(self.origin_dims):
            raise ValidationError("origin_dims do not match the spectrum size")


def self_conjugate_bins(h: int, w: int):
    """Spectrum positions that are purely real for any real input."""
    rows = [0] + ([h // 2] if h % 2 == 0 and h > 1 else [])
    cols = [0] + ([w // 2] if w % 2 == 0 and w > 1 else [])
    return [(u, v) for u in rows for v in cols]


def wrap_phase(p: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    p = np.mod(p + np.pi, 2 * np.pi) - np.pi
    return np.where(p <= -np.pi, p + 2 * np.pi, p)


def angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(wrap_phase(np.asarray(a) - np.asarray(b)))


def _as_grid(signal) -> np.ndarray:
    x = np.asarray(signal.data if isinstance(signal, MultiBandRaster) else signal)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValidationError(f"expected an H x W x C grid, got shape {x.shape}")
    return x


def decompose(signal) -> FrequencyPair:
    """Per-channel orthonormal 2-D DFT split into modulus and argument."""
    x = _as_grid(signal).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("cannot transform a signal containing NaN or inf")
    h, w = x.shape[:2]
    z = np.fft.fft2(x, axes=(0, 1), norm="ortho")
    # these bins are real by symmetry; drop roundoff so their phase is 0 or pi
    for u, v in self_conjugate_bins(h, w):
        z[u, v] = z[u, v].real
    return FrequencyPair(np.abs(z), wrap_phase(np.angle(z)), (h, w))


def recompose(fp: FrequencyPair, return_residue: bool = False):
    """Inverse transform of ``A * exp(iP)``; keeps the real part.

    With ``return_residue=True`` also returns the largest imaginary magnitude
    discarded, which is ~0 for spectra that came from a real signal.
    """
    z = fp.amplitude * np.exp(1j * fp.phase)
    x = np.fft.ifft2(z, axes=(0, 1), norm="ortho")
    if return_residue:
        return x.real, float(np.max(np.abs(x.imag))) if x.size else 0.0
    return x.real


def box_mean(x: np.ndarray, radius: int) -> np.ndarray:
    """Stride-1 (2r+1)^2 mean with mirror padding; radius shrinks on tiny inputs."""
    radius = min(radius, x.shape[0] - 1, x.shape[1] - 1)
    if radius <= 0:
        return x.copy()
    size = (2 * radius + 1, 2 * radius + 1) + (1,) * (x.ndim - 2)
    return uniform_filter(x, size=size, mode="mirror")


def highpass_contrast_filter(x, pool_radius: int = 3) -> np.ndarray:
    """``x * sigmoid(|x - AvgPool(x)|)`` evaluated per channel."""
    if pool_radius < 1:
        raise ValueError(f"pool_radius must be >= 1, got {pool_radius}")
    x = _as_grid(x).astype(np.float64)
    contrast = np.abs(x - box_mean(x, pool_radius))
    return x / (1.0 + np.exp(-contrast))


def swap_amplitude(a_from: MultiBandRaster, p_from: MultiBandRaster) -> MultiBandRaster:
    """Image built from the amplitude spectrum of one raster and the phase of another."""
    if a_from.shape != p_from.shape:
        raise ValidationError(f"shape mismatch: {a_from.shape} vs {p_from.shape}")
    amp = decompose(a_from).amplitude
    pha = decompose(p_from).phase
    out = recompose(FrequencyPair(amp, pha, (a_from.h, a_from.w)))
    return p_from.replace(np.clip(out, 0.0, 1.0))
