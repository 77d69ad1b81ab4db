"""Reference (PSNR, SSIM, SAM, ERGAS) and no-reference (D_lambda, D_s, HQNR) fusion metrics.

All functions take H x W x C arrays or :class:`MultiBandRaster` objects with
reflectance in [0, 1] and compute in float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

from .cloudsim import decimate_array
from .errors import ValidationError
from .raster import MultiBandRaster

PSNR_CAP_DB = 100.0
SAM_EPS = 1e-8


def _arr(x) -> np.ndarray:
    a = np.asarray(x.data if isinstance(x, MultiBandRaster) else x, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return a


def _pair(pred, target):
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio (peak 1.0) over all bands jointly."""
    p, t = _pair(pred, target)
    mse = np.mean((p - t) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x, g):
    half = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[half:x.shape[0] - half, half:x.shape[1] - half]


def ssim(pred, target, win_size: int = 11, sigma: float = 1.5, k1=0.01, k2=0.03) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over bands."""
    p, t = _pair(pred, target)
    if min(p.shape[:2]) < win_size:
        raise ValidationError(f"image {p.shape[:2]} smaller than the {win_size}x{win_size} window")
    c1, c2 = k1 ** 2, k2 ** 2
    g = _gaussian_window(win_size, sigma)
    scores = []
    for b in range(p.shape[2]):
        x, y = p[:, :, b], t[:, :, b]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        scores.append(smap.mean())
    return float(np.mean(scores))


def sam(pred, target) -> float:
    """Mean spectral angle in degrees over pixels with non-degenerate spectra."""
    p, t = _pair(pred, target)
    if p.shape[2] < 2:
        raise ValidationError("SAM needs at least two bands")
    dot = np.sum(p * t, axis=2)
    norm = np.sqrt(np.sum(p * p, axis=2)) * np.sqrt(np.sum(t * t, axis=2))
    valid = norm > SAM_EPS
    if not valid.any():
        return 0.0
    cos = np.clip(dot[valid] / norm[valid], -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(cos))))


def ergas(pred, target, r: int = 4) -> float:
    """``(100 / r) * sqrt(mean_b (RMSE_b / mean(target_b))^2)``."""
    p, t = _pair(pred, target)
    mu = t.mean(axis=(0, 1))
    if np.any(mu <= 0):
        raise ValidationError("ERGAS is undefined for a target band with zero mean")
    rmse = np.sqrt(np.mean((p - t) ** 2, axis=(0, 1)))
    return float(100.0 / r * np.sqrt(np.mean((rmse / mu) ** 2)))


# ------------------------------------------------------------ Q index family


def q_index(x: np.ndarray, y: np.ndarray) -> float:
    """Universal image quality index of two equally sized 2-D blocks."""
    x = x.astype(np.float64).ravel()
    y = y.astype(np.float64).ravel()
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cxy = np.mean((x - mx) * (y - my))
    den_v = vx + vy
    den_m = mx * mx + my * my
    tiny = 1e-12
    if den_v <= tiny and den_m <= tiny:
        return 1.0
    if den_v <= tiny:
        # flat blocks: only the luminance term is defined
        return float(2 * mx * my / den_m)
    if den_m <= tiny:
        return float(2 * cxy / den_v)
    return float(4 * cxy * mx * my / (den_v * den_m))


def q_blocks(x: np.ndarray, y: np.ndarray, block: int = 32) -> float:
    """Mean Q over non-overlapping ``block``-sized tiles; edge tiles may be partial."""
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    h, w = x.shape
    scores = [
        q_index(x[i:i + block, j:j + block], y[i:i + block, j:j + block])
        for i in range(0, h, block)
        for j in range(0, w, block)
    ]
    return float(np.mean(scores))


def qnr_family(fused, lrmsi, pan, r: int = 4, block: int = 32, p: int = 1, q: int = 1):
    """Return ``(d_lambda, d_s, hqnr)`` for a full-resolution fusion result.

    The PAN is reduced to the LR-MSI grid with the same Gaussian
    blur-and-decimate used to simulate the LR sensor.  Q is taken over
    ``block``-sized tiles at full resolution and ``block // r`` tiles on the
    LR grid, so both scales compare the same ground footprint.
    """
    f, lr, pn = _arr(fused), _arr(lrmsi), _arr(pan)
    if pn.shape[2] != 1:
        raise ValidationError("PAN must have a single band")
    if f.shape[:2] != pn.shape[:2] or f.shape[2] != lr.shape[2]:
        raise ValidationError("fused image must match PAN spatially and LR-MSI spectrally")
    if (lr.shape[0] * r, lr.shape[1] * r) != f.shape[:2]:
        raise ValidationError(f"LR-MSI {lr.shape[:2]} is not 1/{r} of {f.shape[:2]}")
    c = f.shape[2]
    lr_block = max(block // r, 2)

    if c > 1:
        diffs = [
            abs(q_blocks(f[:, :, i], f[:, :, j], block) - q_blocks(lr[:, :, i], lr[:, :, j], lr_block)) ** p
            for i in range(c) for j in range(c) if i != j
        ]
        d_lambda = float(np.mean(diffs) ** (1.0 / p))
    else:
        d_lambda = 0.0

    pan_lr = decimate_array(pn, r)[:, :, 0]
    diffs = [
        abs(q_blocks(f[:, :, i], pn[:, :, 0], block) - q_blocks(lr[:, :, i], pan_lr, lr_block)) ** q
        for i in range(c)
    ]
    d_s = float(np.mean(diffs) ** (1.0 / q))
    d_lambda = min(max(d_lambda, 0.0), 1.0)
    d_s = min(max(d_s, 0.0), 1.0)
    return d_lambda, d_s, hqnr_from(d_lambda, d_s)


def hqnr_from(d_lambda: float, d_s: float) -> float:
    return (1.0 - d_lambda) * (1.0 - d_s)


# ------------------------------------------------------------------ reporting


@dataclass
class MetricReport:
    psnr_db: Optional[float] = None
    ssim: Optional[float] = None
    sam_deg: Optional[float] = None
    ergas: Optional[float] = None
    d_lambda: Optional[float] = None
    d_s: Optional[float] = None
    hqnr: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def reduced_resolution_report(pred, target, r: int = 4) -> MetricReport:
    p, t = _pair(pred, target)
    return MetricReport(
        psnr_db=psnr(p, t),
        ssim=ssim(p, t) if min(p.shape[:2]) >= 11 else None,
        sam_deg=sam(p, t),
        ergas=ergas(p, t, r),
    )


def full_resolution_report(fused, lrmsi, pan, r: int = 4) -> MetricReport:
    d_lambda, d_s, hq = qnr_family(fused, lrmsi, pan, r)
    return MetricReport(d_lambda=d_lambda, d_s=d_s, hqnr=hq)
