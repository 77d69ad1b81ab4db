"""Building blocks: stem, DAM, contrast high-pass, MAFG, IFC, FDR and SE variants.

Tensors are laid out B x C x H x W throughout.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import spectral
from .config import NetworkConfig


def conv3x3(cin, cout, bias=True):
    return nn.Conv2d(cin, cout, 3, 1, 1, bias=bias)


def conv1x1(cin, cout, bias=True):
    return nn.Conv2d(cin, cout, 1, 1, 0, bias=bias)


def zero_(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def box_mean(x: torch.Tensor, radius: int) -> torch.Tensor:
    """Stride-1 (2r+1)^2 average with reflect padding; radius shrinks on tiny maps."""
    radius = min(radius, x.shape[-2] - 1, x.shape[-1] - 1)
    if radius <= 0:
        return x
    k = 2 * radius + 1
    padded = F.pad(x, (radius, radius, radius, radius), mode="reflect")
    return F.avg_pool2d(padded, k, stride=1)


class ResidualStem(nn.Module):
    """Two 3x3 convs with a ReLU between them plus a 1x1 projection skip."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = conv3x3(cin, cout)
        self.conv2 = conv3x3(cout, cout)
        self.skip = conv1x1(cin, cout)

    def forward(self, x):
        return self.skip(x) + self.conv2(F.relu(self.conv1(x)))


class DAM(nn.Module):
    """Degradation-aware residual predictor: 2C -> C -> C -> C with ReLUs."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(2 * channels, channels),
            nn.ReLU(),
            conv3x3(channels, channels),
            nn.ReLU(),
            conv3x3(channels, channels),
        )

    @property
    def last(self) -> nn.Conv2d:
        return self.body[-1]

    def forward(self, x):
        return self.body(x)


class ContrastHighPass(nn.Module):
    """``x * sigmoid(a * |x - AvgPool(x)| + b)`` with (a, b) initialised to (1, 0)."""

    def __init__(self, radius: int = 3, learnable: bool = True):
        super().__init__()
        self.radius = radius
        self.affine = None
        if learnable:
            self.affine = conv1x1(1, 1)
            nn.init.ones_(self.affine.weight)
            nn.init.zeros_(self.affine.bias)

    def forward(self, x):
        contrast = torch.abs(x - box_mean(x, self.radius))
        if self.affine is not None:
            contrast = self.affine(contrast)
        return x * torch.sigmoid(contrast)


def mlp(channels, hidden=None):
    hidden = hidden or max(channels // 2, 1)
    return nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))


class MAFG(nn.Module):
    """Channel gate in (0, 1) from concatenated prompt/feature amplitudes."""

    def __init__(self, channels):
        super().__init__()
        self.compress = conv1x1(2 * channels, channels)
        self.mlp = mlp(channels)

    def forward(self, amp_concat):
        pooled = self.compress(amp_concat).mean(dim=(-2, -1))
        return torch.sigmoid(self.mlp(pooled))[:, :, None, None]


class IFC(nn.Module):
    """Bidirectional amplitude/phase cross-modulation.

    ``w_P = sigmoid(MLP_P(GAP(P)))`` modulates the amplitude and
    ``w_A = sigmoid(MLP_A(GAP(A)))`` modulates the phase; the modulated
    residuals are added back, scaled by a learnable scalar that starts at 0.
    """

    def __init__(self, channels):
        super().__init__()
        self.mlp_p = mlp(channels)
        self.mlp_a = mlp(channels)
        self.scale = nn.Parameter(torch.zeros(()))

    def weights(self, phase, amp):
        w_p = torch.sigmoid(self.mlp_p(phase.mean(dim=(-2, -1))))[:, :, None, None]
        w_a = torch.sigmoid(self.mlp_a(amp.mean(dim=(-2, -1))))[:, :, None, None]
        return w_p, w_a

    def forward(self, phase, amp):
        w_p, w_a = self.weights(phase, amp)
        p_res = w_a * phase
        a_res = w_p * amp
        return phase + self.scale * p_res, amp + self.scale * a_res


class ChannelAttentionPair(nn.Module):
    """IFC replacement: each component gated by its own squeeze-excitation weights."""

    def __init__(self, channels):
        super().__init__()
        self.mlp_p = mlp(channels)
        self.mlp_a = mlp(channels)
        self.scale = nn.Parameter(torch.zeros(()))

    def forward(self, phase, amp):
        w_p = torch.sigmoid(self.mlp_p(phase.mean(dim=(-2, -1))))[:, :, None, None]
        w_a = torch.sigmoid(self.mlp_a(amp.mean(dim=(-2, -1))))[:, :, None, None]
        return phase + self.scale * w_p * phase, amp + self.scale * w_a * amp


class PhaseBranch(nn.Module):
    """Phase restoration guided by the (high-passed) PAN prompt."""

    def __init__(self, channels, cfg: NetworkConfig):
        super().__init__()
        ab = cfg.ablation
        self.highpass = ContrastHighPass(cfg.pool_radius) if ab.use_highpass else None
        self.lift = conv1x1(1, channels) if ab.use_pan_prompt else None
        self.dam = DAM(channels) if ab.use_dam else conv1x1(2 * channels, channels)

    def prompt_phase(self, pan):
        x = self.highpass(pan) if self.highpass is not None else pan
        _, phase = spectral.decompose(x)
        return phase

    def forward(self, phase_f, pan):
        if self.lift is not None:
            if pan.shape[-2:] != phase_f.shape[-2:]:
                raise ValueError(f"PAN prompt {tuple(pan.shape[-2:])} misaligned with feature {tuple(phase_f.shape[-2:])}")
            guide = self.lift(self.prompt_phase(pan))
        else:
            guide = phase_f
        return phase_f + self.dam(torch.cat([guide, phase_f], dim=1))


class AmplitudeBranch(nn.Module):
    """Amplitude restoration guided by the NIR prompt, gated by MAFG."""

    def __init__(self, channels, cfg: NetworkConfig):
        super().__init__()
        ab = cfg.ablation
        self.lift = conv1x1(1, channels) if ab.use_nir_prompt else None
        self.dam = DAM(channels) if ab.use_dam else conv1x1(2 * channels, channels)
        self.gate = MAFG(channels) if ab.use_mafg else None

    def forward(self, amp_f, nir):
        if self.lift is not None:
            if nir.shape[-2:] != amp_f.shape[-2:]:
                raise ValueError(f"NIR prompt {tuple(nir.shape[-2:])} misaligned with feature {tuple(amp_f.shape[-2:])}")
            amp_i, _ = spectral.decompose(nir)
            guide = self.lift(amp_i)
        else:
            guide = amp_f
        concat = torch.cat([guide, amp_f], dim=1)
        residual = self.dam(concat)
        if self.gate is not None:
            residual = self.gate(concat) * residual
        return amp_f + residual


class FDRBlock(nn.Module):
    """Frequency-decoupled restoration of a feature map.

    Output is ``F + proj(F_hat - F)`` where ``F_hat`` is the inverse FFT of
    the restored spectrum, so the block is the identity whenever the
    spectrum is left unchanged.
    """

    def __init__(self, channels, cfg: NetworkConfig):
        super().__init__()
        ab = cfg.ablation
        self.topology = ab.branch_topology
        self.phase_branch = PhaseBranch(channels, cfg) if ab.use_phase_branch else None
        self.amp_branch = AmplitudeBranch(channels, cfg) if ab.use_amp_branch else None
        if ab.ifc_mode == "ifc":
            self.ifc = IFC(channels)
        elif ab.ifc_mode == "channel_attention":
            self.ifc = ChannelAttentionPair(channels)
        else:
            self.ifc = None
        self.proj = conv1x1(channels, channels, bias=False)

    def restore(self, x, pan, nir):
        amp, phase = spectral.decompose(x)
        if self.phase_branch is not None:
            phase = self.phase_branch(phase, pan)
        if self.topology == "series" and self.phase_branch is not None:
            # amplitude branch sees the spectrum after the phase update
            amp, phase = spectral.decompose(spectral.recompose(amp, phase))
        if self.amp_branch is not None:
            amp = self.amp_branch(amp, nir)
        if self.ifc is not None:
            phase, amp = self.ifc(phase, amp)
        return spectral.recompose(amp, phase)

    def forward(self, x, pan, nir):
        return x + self.proj(self.restore(x, pan, nir) - x)


class SpatialAttentionUnit(nn.Module):
    """Spatial-domain stand-in for FDR with a comparable parameter budget."""

    def __init__(self, channels, cfg: NetworkConfig):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(channels, 2 * channels),
            nn.ReLU(),
            conv3x3(2 * channels, 2 * channels),
            nn.ReLU(),
            conv3x3(2 * channels, channels),
        )
        # attention map from channel mean/max plus the two prompts
        self.attn = nn.Conv2d(4, 1, 7, 1, 3)

    def forward(self, x, pan, nir):
        stats = torch.cat([x.mean(1, keepdim=True), x.amax(1, keepdim=True), pan, nir], dim=1)
        return x + torch.sigmoid(self.attn(stats)) * self.body(x)


class SpectralTransformer(nn.Module):
    """Spectral-wise self-attention: channels are tokens, pixels are token features."""

    def __init__(self, channels, heads=2):
        super().__init__()
        self.heads = heads
        self.dim_head = channels // heads
        self.to_qkv = nn.Linear(channels, 3 * channels, bias=False)
        self.rescale = nn.Parameter(torch.ones(heads, 1, 1))
        self.proj = nn.Linear(channels, channels)
        self.ffn = nn.Sequential(conv1x1(channels, 2 * channels), nn.ReLU(), conv1x1(2 * channels, channels))

    def attention(self, x):
        """Return per-head (dim_head x dim_head) attention and the value tokens."""
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)  # B, HW, C
        q, k, v = self.to_qkv(tokens).chunk(3, dim=-1)
        split = lambda t: t.transpose(1, 2).reshape(b, self.heads, self.dim_head, h * w)  # noqa: E731
        q, k, v = split(q), split(k), split(v)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = torch.softmax((k @ q.transpose(-2, -1)) * self.rescale, dim=-1)
        spectral.add_flops(2 * b * self.heads * self.dim_head ** 2 * h * w)
        return attn, v

    def forward(self, x):
        b, c, h, w = x.shape
        attn, v = self.attention(x)
        out = (attn @ v).reshape(b, c, h * w).transpose(1, 2)
        out = self.proj(out).transpose(1, 2).reshape(b, c, h, w)
        x = x + out
        return x + self.ffn(x)


class ChannelAttention(nn.Module):
    """Squeeze-excitation gating used as the SE-module ablation."""

    def __init__(self, channels):
        super().__init__()
        self.mlp = mlp(channels)

    def forward(self, x):
        return x * torch.sigmoid(self.mlp(x.mean(dim=(-2, -1))))[:, :, None, None]


def make_fdr(channels, cfg: NetworkConfig) -> nn.Module | None:
    mode = cfg.ablation.fdr_mode
    if mode == "fdr":
        return FDRBlock(channels, cfg)
    if mode == "spatial_attention":
        return SpatialAttentionUnit(channels, cfg)
    return None


def make_se(channels, cfg: NetworkConfig) -> nn.Module | None:
    mode = cfg.ablation.se_mode
    if mode == "swt":
        return SpectralTransformer(channels, cfg.se_heads)
    if mode == "channel_attention":
        return ChannelAttention(channels)
    return None
