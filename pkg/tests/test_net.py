import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from pantcr.errors import FormatError
from pantcr.net import blocks, spectral
from pantcr.net.budget import count_params_flops
from pantcr.net.checkpoint import load_checkpoint, save_checkpoint
from pantcr.net.config import (
    ABLATION_ROWS,
    OUT_OF_SCOPE_ROWS,
    NetworkConfig,
    ablation_config,
    tiny_config,
)
from pantcr.net.model import PanTCRNet, bicubic_upsample, predict
from pantcr.raster import bicubic_resample

DT = torch.float64


def _randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=DT)


def _rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=DT)


# --------------------------------------------------------------- spectral


def test_spectral_roundtrip_and_parseval():
    x = _randn(2, 3, 8, 10)
    amp, phase = spectral.decompose(x)
    assert torch.allclose(spectral.recompose(amp, phase), x, atol=1e-12)
    assert torch.allclose((amp ** 2).sum(dim=(-2, -1)), (x ** 2).sum(dim=(-2, -1)))
    assert phase.min() > -math.pi and phase.max() <= math.pi


def test_spectral_matches_numpy_decompose():
    from pantcr.freq import decompose

    x = _randn(1, 2, 8, 8)
    amp, phase = spectral.decompose(x)
    fp = decompose(x[0].permute(1, 2, 0).numpy())
    np.testing.assert_allclose(amp[0].permute(1, 2, 0).numpy(), fp.amplitude, atol=1e-12)
    big = fp.amplitude > 1e-9
    diff = np.abs(np.angle(np.exp(1j * (phase[0].permute(1, 2, 0).numpy() - fp.phase))))
    assert np.all(diff[big] < 1e-9)


def test_spectral_zero_input_has_finite_gradient():
    x = torch.zeros(1, 1, 4, 4, dtype=DT, requires_grad=True)
    amp, phase = spectral.decompose(x)
    (amp.sum() + phase.sum()).backward()
    assert torch.isfinite(x.grad).all()


# ------------------------------------------------------------------ stem


def test_stem_shape_contract():
    cfg = NetworkConfig(base_width=32, stage_widths=(32, 48, 64))
    lr, pan = _rand(1, 4, 32, 32), _rand(1, 1, 128, 128)
    stem = blocks.ResidualStem(cfg.bands + 1, cfg.base_width).double()
    feat = stem(torch.cat([bicubic_upsample(lr, 4), pan], dim=1))
    assert feat.shape == (1, 32, 128, 128)


def test_stem_zero_input_gives_bias_only():
    stem = blocks.ResidualStem(5, 8).double()
    blocks.zero_(stem.conv2)
    out = stem(torch.zeros(1, 5, 6, 6, dtype=DT))
    expected = stem.skip.bias.detach()[None, :, None, None].expand_as(out)
    assert torch.equal(out, expected)


# ------------------------------------------------------------------- DAM


def test_dam_shape_and_zero_residual():
    dam = blocks.DAM(6).double()
    x = _randn(1, 12, 8, 8)
    assert dam(x).shape == (1, 6, 8, 8)
    blocks.zero_(dam.last)
    assert not dam(x).any()


def test_contrast_highpass_matches_numpy_filter():
    from pantcr.freq import highpass_contrast_filter

    x = _rand(1, 1, 16, 16)
    hp = blocks.ContrastHighPass(3).double()
    ref = highpass_contrast_filter(x[0, 0].numpy(), 3)[:, :, 0]
    np.testing.assert_allclose(hp(x)[0, 0].detach().numpy(), ref, atol=1e-12)


# --------------------------------------------------------------- branches


def test_phase_branch_zero_dam_is_identity():
    cfg = tiny_config()
    br = blocks.PhaseBranch(4, cfg).double()
    blocks.zero_(br.dam.last)
    phase = (2 * _rand(1, 4, 8, 8) - 1) * math.pi
    assert torch.equal(br(phase, _rand(1, 1, 8, 8, seed=1)), phase)


def test_phase_branch_misaligned_prompt():
    br = blocks.PhaseBranch(4, tiny_config()).double()
    with pytest.raises(ValueError):
        br(_rand(1, 4, 8, 8), _rand(1, 1, 4, 4))


def test_phase_branch_off_passes_phase_through():
    cfg = tiny_config().with_ablation(use_phase_branch=False)
    fdr = blocks.FDRBlock(4, cfg).double()
    assert fdr.phase_branch is None
    x = _randn(1, 4, 8, 8)
    amp, phase = spectral.decompose(x)
    blocks.zero_(fdr.amp_branch.dam.last)
    fdr.ifc.scale.data.fill_(0.0)
    assert torch.allclose(fdr.restore(x, _rand(1, 1, 8, 8), _rand(1, 1, 8, 8)), x, atol=1e-12)


def test_mafg_gate_values():
    gate = blocks.MAFG(4).double()
    x = _rand(2, 8, 6, 6)
    g = gate(x)
    assert g.shape == (2, 4, 1, 1)
    assert torch.all((g > 0) & (g < 1))
    blocks.zero_(gate.mlp[-1])
    assert torch.equal(gate(x), torch.full_like(g, 0.5))


def test_mafg_spatial_permutation_invariance():
    gate = blocks.MAFG(4).double()
    x = _rand(1, 8, 6, 6)
    perm = torch.randperm(36, generator=torch.Generator().manual_seed(3))
    xp = x.flatten(2)[:, :, perm].reshape(x.shape)
    assert torch.allclose(gate(x), gate(xp), atol=1e-14)


def test_amplitude_branch_zero_dam_and_zero_gate():
    cfg = tiny_config()
    br = blocks.AmplitudeBranch(4, cfg).double()
    amp = _rand(1, 4, 8, 8) + 0.1
    nir = _rand(1, 1, 8, 8, seed=2)
    assert not torch.equal(br(amp, nir), amp)

    class Closed(nn.Module):
        def forward(self, x):
            return torch.zeros(x.shape[0], 4, 1, 1, dtype=x.dtype)

    br.gate = Closed()
    assert torch.equal(br(amp, nir), amp)
    br2 = blocks.AmplitudeBranch(4, cfg).double()
    blocks.zero_(br2.dam.last)
    assert torch.equal(br2(amp, nir), amp)


# -------------------------------------------------------------------- IFC


def test_ifc_closed_forms():
    ifc = blocks.IFC(4).double()
    blocks.zero_(ifc.mlp_p)
    blocks.zero_(ifc.mlp_a)
    phase, amp = _randn(1, 4, 8, 8), _rand(1, 4, 8, 8)
    p0, a0 = ifc(phase, amp)
    assert torch.equal(p0, phase) and torch.equal(a0, amp)
    ifc.scale.data.fill_(1.0)
    pc, ac = ifc(phase, amp)
    assert torch.equal(pc, 1.5 * phase) and torch.equal(ac, 1.5 * amp)


def test_ifc_zero_phase_weight_keeps_phase():
    ifc = blocks.IFC(4).double()
    ifc.scale.data.fill_(1.0)
    blocks.zero_(ifc.mlp_a)
    ifc.mlp_a[-1].bias.data.fill_(-1e4)  # sigmoid saturates to exactly 0
    phase, amp = _randn(1, 4, 8, 8), _rand(1, 4, 8, 8)
    pc, ac = ifc(phase, amp)
    assert torch.equal(pc, phase)
    assert not torch.equal(ac, amp)


# -------------------------------------------------------------------- FDR


def test_fdr_identity_at_init():
    cfg = tiny_config(zero_init_residuals=True)
    model = PanTCRNet(cfg).double()
    fdr = model.enc0.fdr
    x = _randn(1, cfg.stage_widths[0], 16, 16)
    out = fdr(x, _rand(1, 1, 16, 16), _rand(1, 1, 16, 16, seed=1))
    assert torch.max(torch.abs(out - x)) < 1e-5


def test_fdr_routing():
    sa = blocks.make_fdr(8, tiny_config().with_ablation(fdr_mode="spatial_attention"))
    assert isinstance(sa, blocks.SpatialAttentionUnit)
    assert blocks.make_fdr(8, tiny_config().with_ablation(fdr_mode="off")) is None
    assert isinstance(blocks.make_fdr(8, tiny_config()), blocks.FDRBlock)


def test_fdr_fuzz_finite_and_shape():
    fdr = blocks.FDRBlock(4, tiny_config()).double()
    for seed in range(100):
        x = 3 * _randn(1, 4, 8, 8, seed=seed)
        out = fdr(x, _rand(1, 1, 8, 8, seed=seed + 1), _rand(1, 1, 8, 8, seed=seed + 2))
        assert out.shape == x.shape
        assert torch.isfinite(out).all()


# --------------------------------------------------------------------- SE


def test_se_attention_rows_sum_to_one():
    se = blocks.SpectralTransformer(8, heads=2).double()
    attn, _ = se.attention(_randn(2, 8, 6, 6))
    assert attn.shape == (2, 2, 4, 4)
    assert torch.allclose(attn.sum(-1), torch.ones(2, 2, 4, dtype=DT), atol=1e-6)


def test_se_modes():
    assert blocks.make_se(8, tiny_config().with_ablation(se_mode="off")) is None
    ca = blocks.make_se(8, tiny_config().with_ablation(se_mode="channel_attention"))
    assert isinstance(ca, blocks.ChannelAttention)
    model = PanTCRNet(tiny_config().with_ablation(se_mode="off", fdr_mode="off")).double()
    x = _randn(1, 4, 8, 8)
    assert torch.equal(model.enc0(x, None, None), x)


# ---------------------------------------------------------------- forward


def test_forward_shape_and_identity_at_init():
    model = PanTCRNet(NetworkConfig()).eval()
    lr, pan = torch.rand(1, 4, 32, 32), torch.rand(1, 1, 128, 128)
    with torch.no_grad():
        out = model(lr, pan, clip=False)
    assert out.shape == (1, 4, 128, 128)
    assert torch.equal(out, bicubic_upsample(lr, 4))


def test_predict_matches_bicubic_raster(small_dataset):
    from pantcr.dataset import load_split

    sample = load_split(small_dataset, "test_reduced")[0]
    pred = predict(PanTCRNet(NetworkConfig()), sample)
    ref = bicubic_resample(sample.cloudy_lrmsi, 4)
    np.testing.assert_array_equal(pred.data, ref.data)


def test_forward_validates_inputs():
    model = PanTCRNet(tiny_config())
    with pytest.raises(ValueError):
        model(torch.rand(1, 3, 8, 8), torch.rand(1, 1, 32, 32))
    with pytest.raises(ValueError):
        model(torch.rand(1, 4, 8, 8), torch.rand(1, 1, 16, 16))


def test_forward_deterministic():
    torch.manual_seed(0)
    a = PanTCRNet(tiny_config())
    torch.manual_seed(0)
    b = PanTCRNet(tiny_config())
    for m in (a, b):
        nn.init.normal_(m.head.weight, std=0.1, generator=torch.Generator().manual_seed(1))
    lr, pan = _rand(1, 4, 8, 8).float(), _rand(1, 1, 32, 32, seed=1).float()
    assert torch.equal(a(lr, pan), b(lr, pan))


# ----------------------------------------------------------------- budget


def test_single_conv_budget():
    params, macs = count_params_flops(nn.Conv2d(4, 4, 3, padding=1))
    assert params == 148
    assert macs == 128 * 128 * 4 * 4 * 9


def test_default_budget_frozen():
    params, macs = count_params_flops(NetworkConfig())
    assert 250_000 <= params <= 400_000
    assert 0.6e9 <= macs <= 1.2e9
    assert params == 292_335  # enumerated once, frozen


# -------------------------------------------------------------- ablations


def _probe(cfg, seed=0):
    torch.manual_seed(seed)
    model = PanTCRNet(cfg).double()
    gen = torch.Generator().manual_seed(99)
    with torch.no_grad():
        for p in model.parameters():
            if not p.any():
                p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=DT))
    lr, pan = _rand(1, 4, 4, 4, seed=5), _rand(1, 1, 16, 16, seed=6)
    with torch.no_grad():
        return model(lr, pan, clip=False), sum(p.numel() for p in model.parameters())


def test_every_ablation_row_is_distinct():
    base = tiny_config()
    ref_out, ref_params = _probe(base)
    for row in ABLATION_ROWS:
        if row == "full":
            continue
        out, params = _probe(ablation_config(row, base))
        assert params != ref_params or not torch.allclose(out, ref_out), row


def test_parallel_and_series_differ_with_same_weights():
    par = blocks.FDRBlock(4, tiny_config()).double()
    ser = blocks.FDRBlock(4, tiny_config().with_ablation(branch_topology="series")).double()
    ser.load_state_dict(par.state_dict())
    x = _randn(1, 4, 8, 8)
    pan, nir = _rand(1, 1, 8, 8), _rand(1, 1, 8, 8, seed=1)
    assert not torch.allclose(par(x, pan, nir), ser(x, pan, nir))


def test_ablation_config_errors():
    with pytest.raises(NotImplementedError, match="out of scope"):
        ablation_config(next(iter(OUT_OF_SCOPE_ROWS)))
    with pytest.raises(ValueError):
        ablation_config("w/o-everything")


def test_config_roundtrip_and_validation():
    cfg = tiny_config().with_ablation(se_mode="off")
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        NetworkConfig.from_dict({"widths": [1, 2, 3]})
    with pytest.raises(ValueError):
        NetworkConfig(stage_widths=(16, 24, 47))
    with pytest.raises(ValueError):
        tiny_config().with_ablation(se_mode="transformer")


# ------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(3)
    model = PanTCRNet(tiny_config().with_ablation(ifc_mode="channel_attention"))
    save_checkpoint(model, tmp_path / "ck", extra={"epoch": 4})
    back, meta = load_checkpoint(tmp_path / "ck")
    assert meta["epoch"] == 4
    assert back.cfg == model.cfg
    for (k, a), (_, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), k


def test_checkpoint_errors(tmp_path):
    model = PanTCRNet(tiny_config())
    ck = save_checkpoint(model, tmp_path / "ck")
    blob = (ck / "weights.bin").read_bytes()
    (ck / "weights.bin").write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(ck)
    (ck / "weights.bin").unlink()
    with pytest.raises(FormatError):
        load_checkpoint(ck)
