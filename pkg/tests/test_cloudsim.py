import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pantcr import metrics
from pantcr.cloudsim import (
    MORPHOLOGIES,
    CloudField,
    apply_scattering,
    generate_cloud_field,
    make_sample,
    scatter_array,
    wald_degrade,
)
from pantcr.dataset import SynthConfig, load_manifest, load_split, synth_dataset
from pantcr.errors import CapacityError, ValidationError
from pantcr.raster import MultiBandRaster, bicubic_resample
from pantcr.scenes import MSI_WAVELENGTHS_NM, PAN_WAVELENGTH_NM, generate_scene

WL = MSI_WAVELENGTHS_NM


def _field(d, **kw):
    return CloudField(np.asarray(d, dtype=np.float64), **kw)


# --------------------------------------------------------------- scattering


def test_zero_depth_is_exact_identity(scene_128):
    hr, _ = scene_128
    out = apply_scattering(hr, _field(np.zeros((128, 128))))
    assert np.array_equal(out.data, hr.data)


def test_thick_cloud_converges_to_airlight(scene_128):
    hr, _ = scene_128
    out = apply_scattering(hr, _field(np.full((128, 128), 40.0)))
    np.testing.assert_allclose(out.data, 0.85, atol=1e-5)


def test_hand_evaluated_half_transmittance():
    clean = MultiBandRaster(np.full((4, 4, 1), 0.4), (550.0,))
    cloud = _field(np.full((4, 4), np.log(2.0)), airlight=0.9)  # k(550) = k0 = 1
    out = apply_scattering(clean, cloud)
    np.testing.assert_allclose(out.data, 0.65, atol=1e-6)


def test_extinction_law_values():
    cloud = _field(np.zeros((1, 1)))
    assert cloud.extinction(550.0) == pytest.approx(1.0)
    assert cloud.extinction(1100.0) == pytest.approx(2.0 ** -1.3)
    k = cloud.extinction(np.array(WL))
    assert np.all(np.diff(k) < 0)


def test_scattering_dim_mismatch(scene_128):
    hr, _ = scene_128
    with pytest.raises(ValidationError):
        apply_scattering(hr, _field(np.zeros((64, 64))))


@given(alpha=st.floats(0, 1), seed=st.integers(0, 10_000))
def test_scattering_is_affine(alpha, seed):
    g = np.random.default_rng(seed)
    x, y = g.random((6, 6, 4)), g.random((6, 6, 4))
    cloud = _field(g.uniform(0, 2, (6, 6)))
    lhs = scatter_array(alpha * x + (1 - alpha) * y, WL, cloud)
    rhs = alpha * scatter_array(x, WL, cloud) + (1 - alpha) * scatter_array(y, WL, cloud)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_band_deviation_non_increasing_in_wavelength(seed):
    hr, _ = generate_scene(100 + seed, 64, 64)
    cloud = generate_cloud_field(seed, MORPHOLOGIES[seed % 4], 0.8, (64, 64))
    dev = np.abs(apply_scattering(hr, cloud).data - hr.data).mean(axis=(0, 1))
    assert np.all(np.diff(dev) <= 1e-12)
    assert dev[3] <= dev[0]


# -------------------------------------------------------------- cloud fields


@pytest.mark.parametrize("morphology", MORPHOLOGIES)
def test_cloud_field_deterministic_and_bounded(morphology):
    a = generate_cloud_field(9, morphology, 0.7, (48, 40))
    b = generate_cloud_field(9, morphology, 0.7, (48, 40))
    assert np.array_equal(a.depth_map, b.depth_map)
    assert a.depth_map.shape == (48, 40)
    assert a.depth_map.min() >= 0 and a.depth_map.max() <= 0.7 + 1e-12
    c = generate_cloud_field(10, morphology, 0.7, (48, 40))
    assert not np.array_equal(a.depth_map, c.depth_map)


def test_zero_thickness_field():
    d = generate_cloud_field(3, "wispy", 0.0, (32, 32)).depth_map
    assert not d.any()


@pytest.mark.parametrize("morphology", MORPHOLOGIES)
def test_mean_transmittance_band(morphology):
    means = [
        generate_cloud_field(s, morphology, 1.0, (64, 64)).transmittance(480.0).mean()
        for s in range(100)
    ]
    assert 0.3 < min(means) and max(means) < 0.95


def test_cloud_field_errors():
    with pytest.raises(ValueError):
        generate_cloud_field(0, "cirrus", 1.0, (8, 8))
    with pytest.raises(ValueError):
        generate_cloud_field(0, "wispy", -1.0, (8, 8))
    with pytest.raises(ValidationError):
        _field(-np.ones((2, 2)))


def test_downsample_block_mean():
    d = np.arange(16, dtype=float).reshape(4, 4)
    small = _field(d).downsample(2).depth_map
    np.testing.assert_allclose(small, [[2.5, 4.5], [10.5, 12.5]])


# -------------------------------------------------------------- degradation


def test_wald_constant_and_shape():
    hr = MultiBandRaster(np.full((128, 128, 4), 0.3), WL)
    pan = MultiBandRaster(np.full((128, 128, 1), 0.6), (PAN_WAVELENGTH_NM,))
    lr, lr_pan = wald_degrade(hr, pan, 4)
    assert lr.shape == (32, 32, 4) and lr_pan.shape == (32, 32, 1)
    np.testing.assert_allclose(lr.data, 0.3, atol=1e-6)
    np.testing.assert_allclose(lr_pan.data, 0.6, atol=1e-6)
    assert lr.gsd_m == pytest.approx(4.0)


def test_wald_suppresses_high_frequency_ripple():
    n = 128
    xx = np.arange(n)[None, :].repeat(n, 0)
    ripple = 0.2
    img = 0.5 + ripple * np.sin(2 * np.pi * 0.4 * xx)
    hr = MultiBandRaster(img[:, :, None].repeat(4, 2), WL)
    pan = MultiBandRaster(img[:, :, None], (PAN_WAVELENGTH_NM,))
    lr, _ = wald_degrade(hr, pan, 4)
    inner = lr.data[4:-4, 4:-4]
    assert (inner.max() - inner.min()) / 2 < 0.05 * ripple


def test_wald_indivisible():
    hr = MultiBandRaster(np.zeros((10, 10, 4)), WL)
    pan = MultiBandRaster(np.zeros((10, 10, 1)), (675,))
    with pytest.raises(ValueError):
        wald_degrade(hr, pan, 4)


@pytest.mark.parametrize("seed", range(50))
def test_degrade_then_upsample_is_low_pass(seed):
    hr, pan = generate_scene(seed, 64, 64)
    lr, _ = wald_degrade(hr, pan, 4)
    up = bicubic_resample(lr, 4)
    assert np.all(up.data.var(axis=(0, 1)) <= hr.data.var(axis=(0, 1)))


# ------------------------------------------------------------------ samples


def test_make_sample_without_cloud(scene_128):
    hr, pan = scene_128
    s = make_sample(hr, pan, cloud_seed=4, thickness_scale=0.0)
    lr, _ = wald_degrade(hr, pan, 4)
    assert np.array_equal(s.cloudy_pan.data, pan.data)
    assert np.array_equal(s.cloudy_lrmsi.data, lr.data)
    assert np.array_equal(s.clean_hrmsi.data, hr.data)


def test_make_sample_deterministic(scene_128):
    hr, pan = scene_128
    a = make_sample(hr, pan, cloud_seed=21, thickness_scale=0.6)
    b = make_sample(hr, pan, cloud_seed=21, thickness_scale=0.6)
    assert a.cloudy_lrmsi.data.tobytes() == b.cloudy_lrmsi.data.tobytes()
    assert a.cloudy_pan.data.tobytes() == b.cloudy_pan.data.tobytes()
    assert a.cloudy_pan.tags == b.cloudy_pan.tags


@pytest.mark.parametrize("morphology", MORPHOLOGIES)
def test_sam_grows_with_thickness(scene_128, morphology):
    hr, pan = scene_128
    sams = []
    for thickness in (0.0, 0.5, 1.0):
        s = make_sample(hr, pan, cloud_seed=8, thickness_scale=thickness, morphology=morphology)
        sams.append(metrics.sam(s.cloudy_lrmsi.data, s.clean_lrmsi.data))
    assert sams[0] < sams[1] < sams[2]


# ------------------------------------------------------------------ dataset


def test_synth_all_zero_counts(tmp_path, scene_128):
    man = synth_dataset([scene_128], {}, SynthConfig(), tmp_path)
    assert all(len(v) == 0 for v in man["splits"].values())
    assert sorted(p.name for p in tmp_path.iterdir()) == ["dataset.json"]


def test_synth_80_reduced_patches(tmp_path):
    scenes = [generate_scene(s, 512, 512) for s in range(5)]
    man = synth_dataset(scenes, {"test_reduced": 80}, SynthConfig(), tmp_path)
    entries = man["splits"]["test_reduced"]
    assert len(entries) == 80
    assert all(e["dims"] == [128, 128] for e in entries)


def test_synth_regions_disjoint_and_loadable(tmp_path):
    scenes = [generate_scene(s, 256, 256) for s in range(2)]
    counts = {"train": 12, "val": 4, "test_reduced": 3, "test_full": 0}
    cfg = SynthConfig(full_size=256)
    synth_dataset(scenes, counts, cfg, tmp_path)
    man = load_manifest(tmp_path)
    entries = [e for split in man["splits"].values() for e in split]
    for a, b in itertools.combinations(entries, 2):
        if a["source"] != b["source"]:
            continue
        ay0, ax0, ay1, ax1 = a["bbox"]
        by0, bx0, by1, bx1 = b["bbox"]
        assert ay1 <= by0 or by1 <= ay0 or ax1 <= bx0 or bx1 <= ax0
    train = load_split(man, "train")
    assert len(train) == 12
    assert train[0].cloudy_lrmsi.shape == (16, 16, 4)
    assert train[0].cloudy_pan.shape == (64, 64, 1)


def test_synth_capacity_error(tmp_path, scene_128):
    with pytest.raises(CapacityError):
        synth_dataset([scene_128], {"test_full": 1}, SynthConfig(), tmp_path)
