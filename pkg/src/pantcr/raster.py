"""Multi-band reflectance rasters, the `.mbr` container, resampling and histogram matching.

Layout of an `.mbr` file: one line of UTF-8 JSON (the header) terminated by
``\\n``, followed by the raw row-major ``H*W*C`` payload.  Reserved header keys
are ``h, w, c, dtype, wavelengths_nm, gsd_m`` (plus ``max_value`` for integer
payloads); every other key is a free-form string tag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

NIR_RANGE_NM = (760.0, 900.0)

_DTYPES = {"f32le": np.dtype("<f4"), "u16le": np.dtype("<u2")}
_RESERVED = {"h", "w", "c", "dtype", "wavelengths_nm", "gsd_m", "max_value"}


@dataclass
class MultiBandRaster:
    """H x W x C reflectance grid in [0, 1] with per-band center wavelengths."""

    data: np.ndarray
    band_wavelengths_nm: Sequence[float]
    gsd_m: float = 1.0
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValidationError(f"raster data must be H x W x C, got shape {data.shape}")
        h, w, c = data.shape
        if h < 1 or w < 1 or c < 1:
            raise ValidationError(f"raster dims must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("raster contains non-finite values")
        wl = [float(v) for v in self.band_wavelengths_nm]
        if len(wl) != c:
            raise ValidationError(f"{len(wl)} wavelengths given for {c} bands")
        if any(v <= 0 for v in wl):
            raise ValidationError("band wavelengths must be strictly positive")
        self.data = np.clip(data, 0.0, 1.0).astype(np.float32, copy=False)
        self.band_wavelengths_nm = wl
        self.gsd_m = float(self.gsd_m)
        self.tags = {str(k): str(v) for k, v in self.tags.items()}

    @property
    def shape(self):
        return self.data.shape

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    def replace(self, data: np.ndarray, **kwargs) -> "MultiBandRaster":
        """Copy of this raster's metadata around new pixel data."""
        meta = dict(
            band_wavelengths_nm=self.band_wavelengths_nm,
            gsd_m=self.gsd_m,
            tags=dict(self.tags),
        )
        meta.update(kwargs)
        return MultiBandRaster(data, **meta)

    def nir_index(self) -> int:
        """Index of the band whose center wavelength lies in the NIR window."""
        lo, hi = NIR_RANGE_NM
        for i, wl in enumerate(self.band_wavelengths_nm):
            if lo <= wl <= hi:
                return i
        raise ValidationError(f"no band in the NIR range {NIR_RANGE_NM} nm")


@dataclass
class SamplePair:
    """One training/test tuple: cloudy inputs plus the clean high-resolution target."""

    cloudy_lrmsi: MultiBandRaster
    cloudy_pan: MultiBandRaster
    clean_hrmsi: MultiBandRaster
    scale_ratio: int = 4
    id: str = ""
    clean_lrmsi: Optional[MultiBandRaster] = None
    clean_pan: Optional[MultiBandRaster] = None

    def __post_init__(self):
        r = self.scale_ratio
        if not isinstance(r, (int, np.integer)) or r < 1:
            raise ValidationError(f"scale ratio must be a positive integer, got {r!r}")
        lr, pan, hr = self.cloudy_lrmsi, self.cloudy_pan, self.clean_hrmsi
        if pan.c != 1:
            raise ValidationError(f"PAN must have one band, got {pan.c}")
        if (pan.h, pan.w) != (r * lr.h, r * lr.w):
            raise ValidationError(
                f"PAN {pan.h}x{pan.w} is not {r}x the LR-MSI {lr.h}x{lr.w}"
            )
        if (hr.h, hr.w) != (pan.h, pan.w) or hr.c != lr.c:
            raise ValidationError(
                f"target {hr.shape} must match PAN spatially and LR-MSI spectrally"
            )


# --------------------------------------------------------------------------- I/O


def save_raster(raster: MultiBandRaster, path) -> Path:
    path = Path(path)
    header = {
        "h": raster.h,
        "w": raster.w,
        "c": raster.c,
        "dtype": "f32le",
        "wavelengths_nm": list(raster.band_wavelengths_nm),
        "gsd_m": raster.gsd_m,
    }
    for k, v in raster.tags.items():
        if k in _RESERVED:
            raise ValidationError(f"tag name {k!r} collides with a header field")
        header[k] = v
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(raster.data, dtype="<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        fh.write(payload)
    return path


def load_raster(path) -> MultiBandRaster:
    """Read an `.mbr` file.

    Integer payloads (``u16le``) are normalized by the header's ``max_value``;
    float payloads are clipped to [0, 1].
    """
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header terminator")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a JSON object")
    try:
        h, w, c = int(header["h"]), int(header["w"]), int(header["c"])
        dtype_name = header["dtype"]
        wavelengths = header["wavelengths_nm"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete header ({exc})") from exc
    if dtype_name not in _DTYPES:
        raise FormatError(f"{path}: unsupported dtype {dtype_name!r}")
    dtype = _DTYPES[dtype_name]
    payload = raw[nl + 1:]
    expected = h * w * c * dtype.itemsize
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: header declares {h}x{w}x{c} ({expected} bytes), payload has {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w, c)
    if dtype_name == "u16le":
        max_value = float(header.get("max_value", 0))
        if max_value <= 0:
            raise FormatError(f"{path}: integer payload needs a positive max_value")
        data = data.astype(np.float64) / max_value
    else:
        data = data.astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    tags = {k: v for k, v in header.items() if k not in _RESERVED}
    return MultiBandRaster(
        data, wavelengths, gsd_m=header.get("gsd_m", 1.0), tags=tags
    )


def save_png(raster: MultiBandRaster, path, bands: Optional[Sequence[int]] = None) -> Path:
    """8-bit visualization export; defaults to R,G,B when four bands are present."""
    from PIL import Image

    if bands is None:
        bands = (2, 1, 0) if raster.c >= 3 else (0,)
    img = raster.data[:, :, list(bands)]
    img = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    mode = "L" if img.shape[2] == 1 else "RGB"
    Image.fromarray(img[:, :, 0] if mode == "L" else img, mode=mode).save(path)
    return Path(path)


# -------------------------------------------------------------------- resampling


def _catmull_rom(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    out = np.zeros_like(x)
    near = x <= 1
    far = (x > 1) & (x < 2)
    out[near] = (a + 2) * x3[near] - (a + 3) * x2[near] + 1
    out[far] = a * x3[far] - 5 * a * x2[far] + 8 * a * x[far] - 4 * a
    return out


def _fold(idx: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric reflection: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix; rows sum to one.

    Pixel centers are aligned (half-pixel convention); when shrinking the
    kernel is stretched by the inverse scale to anti-alias.
    """
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    for i, x in enumerate(centers):
        taps = np.arange(int(np.floor(x - support)), int(np.ceil(x + support)) + 1)
        w = _catmull_rom((x - taps) * kscale)
        np.add.at(mat[i], _fold(taps, n_in), w)
        mat[i] /= mat[i].sum()
    mat.setflags(write=False)
    return mat


def resample_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resampling of an H x W x C array (float64, unclipped)."""
    ry = bicubic_matrix(arr.shape[0], out_h)
    rx = bicubic_matrix(arr.shape[1], out_w)
    return np.einsum("ij,jkc,lk->ilc", ry, arr.astype(np.float64), rx, optimize=True)


def _scaled(n: int, factor: Fraction) -> int:
    return int(round(n * factor))


def bicubic_resample(img: MultiBandRaster, factor) -> MultiBandRaster:
    """Resize by a positive rational factor (e.g. ``4`` or ``Fraction(1, 4)``)."""
    try:
        factor = Fraction(factor).limit_denominator(10_000)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid resampling factor {factor!r}") from exc
    if factor <= 0:
        raise ValueError(f"resampling factor must be positive, got {factor}")
    out_h, out_w = _scaled(img.h, factor), _scaled(img.w, factor)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"factor {factor} collapses {img.h}x{img.w} to zero size")
    out = resample_array(img.data, out_h, out_w)
    return img.replace(np.clip(out, 0.0, 1.0), gsd_m=img.gsd_m / float(factor))


# ------------------------------------------------------------ histogram matching

N_BINS = 256


def _bin_index(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x * N_BINS).astype(np.int64), 0, N_BINS - 1)


def _match_band(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    src_bins = _bin_index(src)
    src_hist = np.bincount(src_bins.ravel(), minlength=N_BINS) / src.size
    # mid-rank of every occupied source bin
    mid = np.cumsum(src_hist) - 0.5 * src_hist

    ref_hist = np.bincount(_bin_index(ref).ravel(), minlength=N_BINS) / ref.size
    ref_cdf = np.concatenate([[0.0], np.cumsum(ref_hist)])
    edges = np.arange(N_BINS + 1) / N_BINS
    # inverse of the piecewise-linear reference CDF; flat stretches are
    # collapsed to their left edge so np.interp sees increasing knots
    keep = np.concatenate([[True], np.diff(ref_cdf) > 0])
    lut = np.interp(mid, ref_cdf[keep], edges[keep])
    return lut[src_bins]


def histogram_match(src: MultiBandRaster, ref: MultiBandRaster) -> MultiBandRaster:
    """Per-band CDF matching of ``src`` onto ``ref`` using 256-bin histograms."""
    if src.c != ref.c:
        raise ValidationError(f"band count mismatch: {src.c} vs {ref.c}")
    out = np.empty(src.shape, dtype=np.float64)
    for b in range(src.c):
        out[:, :, b] = _match_band(src.data[:, :, b], ref.data[:, :, b])
    return src.replace(out)
