"""Differentiable amplitude/phase split for B x C x H x W tensors (orthonormal FFT)."""

from __future__ import annotations

import contextvars
import math

import torch

# Active MAC counter while ``count_params_flops`` traces the model.
flop_counter: contextvars.ContextVar = contextvars.ContextVar("flop_counter", default=None)


def add_flops(n: float) -> None:
    counter = flop_counter.get()
    if counter is not None:
        counter.append(float(n))


def _fft_cost(x: torch.Tensor) -> float:
    h, w = x.shape[-2:]
    hw = h * w
    channels = x.numel() // hw
    return 5.0 * hw * math.log2(hw) * channels if hw > 1 else 0.0


def _real_bin_mask(h: int, w: int, device) -> torch.Tensor:
    mask = torch.zeros(h, w, dtype=torch.bool, device=device)
    rows = [0] + ([h // 2] if h % 2 == 0 and h > 1 else [])
    cols = [0] + ([w // 2] if w % 2 == 0 and w > 1 else [])
    for u in rows:
        for v in cols:
            mask[u, v] = True
    return mask


def decompose(x: torch.Tensor):
    """Return ``(amplitude, phase)`` of the per-channel 2-D FFT, phase in (-pi, pi].

    Bins that are real by symmetry get an exact zero imaginary part, and
    (near-)zero bins get phase 0 with zero gradient instead of NaN.
    """
    add_flops(_fft_cost(x))
    z = torch.fft.fft2(x, norm="ortho")
    re, im = z.real, z.imag
    mask = _real_bin_mask(x.shape[-2], x.shape[-1], x.device)
    im = torch.where(mask, torch.zeros_like(im), im)
    power = re * re + im * im
    small = power <= torch.finfo(x.dtype).eps ** 2
    # safe branches keep sqrt/atan2 gradients finite at the origin
    amp = torch.where(
        small,
        torch.abs(re) + torch.abs(im),
        torch.sqrt(torch.where(small, torch.ones_like(power), power)),
    )
    phase = torch.atan2(
        torch.where(small, torch.zeros_like(im), im),
        torch.where(small, torch.ones_like(re), re),
    )
    return amp, phase


def recompose(amp: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
    """Real part of the inverse orthonormal FFT of ``amp * exp(i * phase)``."""
    add_flops(_fft_cost(amp))
    z = torch.complex(amp * torch.cos(phase), amp * torch.sin(phase))
    return torch.fft.ifft2(z, norm="ortho").real
