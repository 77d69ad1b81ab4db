"""The three-stage encoder-decoder fusion network."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..raster import MultiBandRaster, SamplePair, bicubic_matrix
from . import blocks
from .config import NetworkConfig


def bicubic_upsample(x: torch.Tensor, r: int) -> torch.Tensor:
    """Same separable Catmull-Rom resampling as the raster module, computed in float64."""
    h, w = x.shape[-2:]
    ry = torch.from_numpy(np.array(bicubic_matrix(h, h * r))).to(x.device)
    rx = torch.from_numpy(np.array(bicubic_matrix(w, w * r))).to(x.device)
    up = torch.einsum("ij,bcjk,lk->bcil", ry, x.to(torch.float64), rx)
    return up.to(x.dtype)


class Stage(nn.Module):
    """One FDR block followed by one SE module; either may be disabled."""

    def __init__(self, channels, cfg: NetworkConfig):
        super().__init__()
        self.fdr = blocks.make_fdr(channels, cfg)
        self.se = blocks.make_se(channels, cfg)

    def forward(self, x, pan, nir):
        if self.fdr is not None:
            x = self.fdr(x, pan, nir)
        if self.se is not None:
            x = self.se(x)
        return x


class Down(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = blocks.conv1x1(cin, cout)

    def forward(self, x):
        return self.conv(F.avg_pool2d(x, 2))


class Up(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = blocks.conv3x3(cin, cout)
        self.fuse = blocks.conv1x1(2 * cout, cout)

    def forward(self, x, skip):
        x = self.conv(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
        return self.fuse(torch.cat([x, skip], dim=1))


class PanTCRNet(nn.Module):
    """Predicts a residual on top of the bicubic-upsampled cloudy LR-MSI.

    The output head is zero-initialised, so an untrained network returns
    the bicubic upsampling exactly.
    """

    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        w0, w1, w2 = cfg.stage_widths
        self.stem = blocks.ResidualStem(cfg.bands + 1, w0)
        self.enc0 = Stage(w0, cfg)
        self.down0 = Down(w0, w1)
        self.enc1 = Stage(w1, cfg)
        self.down1 = Down(w1, w2)
        self.bottleneck = Stage(w2, cfg)
        self.up1 = Up(w2, w1)
        self.up0 = Up(w1, w0)
        self.head = blocks.zero_(blocks.conv3x3(w0, cfg.bands))
        if cfg.zero_init_residuals:
            self.zero_residual_layers()

    def zero_residual_layers(self):
        """Zero every layer that emits a residual so each block starts as the identity."""
        for m in self.modules():
            if isinstance(m, blocks.DAM):
                blocks.zero_(m.last)
            elif isinstance(m, blocks.FDRBlock):
                blocks.zero_(m.proj)
            elif isinstance(m, (blocks.IFC, blocks.ChannelAttentionPair)):
                nn.init.zeros_(m.scale)
            elif isinstance(m, blocks.SpectralTransformer):
                blocks.zero_(m.proj)
                blocks.zero_(m.ffn[-1])
        blocks.zero_(self.head)

    def prompts(self, pan, up):
        """PAN and NIR prompts at full, 1/2 and 1/4 resolution."""
        nir = up[:, self.cfg.nir_band:self.cfg.nir_band + 1]
        out = []
        for i in range(3):
            k = 2 ** i
            out.append((F.avg_pool2d(pan, k) if k > 1 else pan, F.avg_pool2d(nir, k) if k > 1 else nir))
        return out

    def forward(self, lrmsi: torch.Tensor, pan: torch.Tensor, clip: bool | None = None) -> torch.Tensor:
        r = self.cfg.scale_ratio
        b, c, h, w = lrmsi.shape
        if c != self.cfg.bands:
            raise ValueError(f"expected {self.cfg.bands} bands, got {c}")
        if pan.shape[1] != 1 or pan.shape[-2:] != (h * r, w * r):
            raise ValueError(f"PAN {tuple(pan.shape)} does not match LR-MSI {tuple(lrmsi.shape)} at r={r}")
        if (h * r) % 4 or (w * r) % 4:
            raise ValueError("full-resolution size must be divisible by 4")
        up = bicubic_upsample(lrmsi, r)
        (p0, n0), (p1, n1), (p2, n2) = self.prompts(pan, up)

        x = self.stem(torch.cat([up, pan], dim=1))
        s0 = self.enc0(x, p0, n0)
        s1 = self.enc1(self.down0(s0), p1, n1)
        x = self.bottleneck(self.down1(s1), p2, n2)
        x = self.up1(x, s1)
        x = self.up0(x, s0)
        out = up + self.head(x)
        if clip is None:
            clip = not self.training
        return out.clamp(0.0, 1.0) if clip else out


# ------------------------------------------------------------------ helpers


def to_tensor(raster: MultiBandRaster, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(raster.data.transpose(2, 0, 1))).to(dtype)[None]


def batch_from_samples(samples, dtype=torch.float32):
    lr = torch.cat([to_tensor(s.cloudy_lrmsi, dtype) for s in samples])
    pan = torch.cat([to_tensor(s.cloudy_pan, dtype) for s in samples])
    target = torch.cat([to_tensor(s.clean_hrmsi, dtype) for s in samples])
    return lr, pan, target


@torch.no_grad()
def predict(model: PanTCRNet, sample: SamplePair) -> MultiBandRaster:
    """Inference on one sample; output clipped to [0, 1]."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = model(to_tensor(sample.cloudy_lrmsi, dtype), to_tensor(sample.cloudy_pan, dtype), clip=True)
    model.train(was_training)
    arr = out[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)
    return sample.clean_hrmsi.replace(arr, tags={"id": sample.id})
