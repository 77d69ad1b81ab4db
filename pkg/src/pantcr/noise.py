"""Lattice value noise evaluated at arbitrary (rotated, stretched) coordinates."""

import numpy as np


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(u: np.ndarray, v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smoothly interpolated random lattice sampled at continuous coords (u, v).

    Lattice values are drawn from ``rng`` over the bounding box of the
    coordinates, so the result is a deterministic function of the rng state.
    Output lies in [0, 1].
    """
    u0 = np.floor(u)
    v0 = np.floor(v)
    umin, vmin = int(u0.min()), int(v0.min())
    gh = int(u0.max()) - umin + 2
    gw = int(v0.max()) - vmin + 2
    grid = rng.random((gh, gw))

    iu = (u0 - umin).astype(np.int64)
    iv = (v0 - vmin).astype(np.int64)
    fu = _fade(u - u0)
    fv = _fade(v - v0)

    g00 = grid[iu, iv]
    g10 = grid[iu + 1, iv]
    g01 = grid[iu, iv + 1]
    g11 = grid[iu + 1, iv + 1]
    top = g00 + fv * (g01 - g00)
    bot = g10 + fv * (g11 - g10)
    return top + fu * (bot - top)


def fractal_noise(
    shape,
    rng: np.random.Generator,
    cell: float,
    weights=(1.0, 0.5, 0.25, 0.125),
    anisotropy: float = 1.0,
    angle: float = 0.0,
) -> np.ndarray:
    """Octave sum of value noise, normalized to [0, 1] by the weight total.

    ``cell`` is the lattice spacing (pixels) of the first octave; each later
    octave halves it.  ``anisotropy`` stretches features along ``angle``.
    """
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ca, sa = np.cos(angle), np.sin(angle)
    along = xx * ca + yy * sa
    across = -xx * sa + yy * ca
    total = np.zeros(shape)
    for octave, weight in enumerate(weights):
        c = cell / (2 ** octave)
        total += weight * value_noise(across / c, along / (c * anisotropy), rng)
    return total / float(sum(weights))
