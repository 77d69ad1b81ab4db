"""Parameter and multiply-accumulate counts by enumerating layers on a probe input."""

from __future__ import annotations

import torch
import torch.nn as nn

from . import spectral
from .config import NetworkConfig
from .model import PanTCRNet

CANONICAL_HW = (128, 128)


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def _conv_hook(counter):
    def hook(mod: nn.Conv2d, inputs, output):
        kh, kw = mod.kernel_size
        counter.append(output.numel() * (mod.in_channels // mod.groups) * kh * kw)
    return hook


def _linear_hook(counter):
    def hook(mod: nn.Linear, inputs, output):
        counter.append(output.numel() * mod.in_features)
    return hook


def count_params_flops(cfg_or_model, input_hw=CANONICAL_HW):
    """Return ``(params, macs)`` for one sample at ``input_hw`` full resolution.

    MACs cover every convolution and linear layer, the spectral attention
    products, and each FFT/IFFT at ``5 * H * W * log2(H * W)`` per channel.
    A bare ``nn.Conv2d``/``nn.Module`` is probed directly with an input of
    its own channel count.
    """
    if isinstance(cfg_or_model, NetworkConfig):
        model = PanTCRNet(cfg_or_model)
    else:
        model = cfg_or_model
    counter = []
    handles = []
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            handles.append(m.register_forward_hook(_conv_hook(counter)))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(_linear_hook(counter)))
    token = spectral.flop_counter.set(counter)
    try:
        with torch.no_grad():
            h, w = input_hw
            if isinstance(model, PanTCRNet):
                r = model.cfg.scale_ratio
                model(torch.zeros(1, model.cfg.bands, h // r, w // r), torch.zeros(1, 1, h, w))
            elif isinstance(model, nn.Conv2d):
                model(torch.zeros(1, model.in_channels, h, w))
            else:
                raise TypeError(f"cannot probe {type(model).__name__}")
    finally:
        spectral.flop_counter.reset(token)
        for hd in handles:
            hd.remove()
    return count_params(model), int(round(sum(counter)))
