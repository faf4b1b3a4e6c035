import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

from texfield.evaluation import (EXACT, EmptyRenderError, GaussianStats, _patch_weights, frechet_distance, masked_psnr,
                                 patch_features, psnr, sifid_per_view, sifid_surrogate, write_report)
from texfield.geometry import build_bvh
from texfield.renderer import ImageBuffer, fixed_viewpoints, render_gt_views
from texfield.shapes import icosphere, smooth_colors, stripe_colors

from oracles import frechet_mpmath, stride2_conv_loop


def img(rgb, mask=None):
    rgb = np.asarray(rgb, dtype=np.float64)
    return ImageBuffer(rgb, np.ones(rgb.shape[:2], bool) if mask is None else mask)


def random_psd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.1 * np.eye(n)


@pytest.fixture(scope="module")
def source_views():
    m = icosphere(3)
    m = m.with_colors(stripe_colors(m))
    return render_gt_views(m, build_bvh(m), fixed_viewpoints(resolution=(64, 64)))


# -- patch features -------------------------------------------------------------

def test_constant_image_rows_identical():
    f = patch_features(img(np.full((32, 32, 3), 0.4)))
    assert len(f) == 16
    np.testing.assert_allclose(f, np.broadcast_to(f[0], f.shape), atol=1e-12)


def test_patch_features_deterministic():
    a = img(np.random.default_rng(0).uniform(size=(16, 16, 3)))
    assert np.array_equal(patch_features(a, 3), patch_features(a, 3))


def test_patch_features_match_loop():
    x = np.random.default_rng(1).uniform(size=(16, 16, 3))
    (w, b), = _patch_weights(5, (6,))
    got = patch_features(img(x), seed=5, channels=(6,))
    np.testing.assert_allclose(got, stride2_conv_loop(x, w, b).reshape(-1, 6), atol=1e-6)


def test_background_only_render_is_error():
    with pytest.raises(EmptyRenderError):
        patch_features(img(np.zeros((16, 16, 3)), np.zeros((16, 16), bool)))


# -- Frechet ---------------------------------------------------------------------

def test_frechet_self_zero():
    rng = np.random.default_rng(2)
    a = GaussianStats(rng.normal(size=5), random_psd(rng, 5))
    assert frechet_distance(a, a) < 1e-6


def test_frechet_mean_shift_only():
    rng = np.random.default_rng(3)
    c = random_psd(rng, 4)
    d = np.array([0.5, -1.0, 2.0, 0.0])
    mu = rng.normal(size=4)
    assert frechet_distance(GaussianStats(mu, c), GaussianStats(mu + d, c)) == pytest.approx(d @ d, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_frechet_matches_mpmath(seed):
    rng = np.random.default_rng(seed)
    mu1, mu2 = rng.normal(size=4), rng.normal(size=4)
    c1, c2 = random_psd(rng, 4), random_psd(rng, 4)
    ours = frechet_distance(GaussianStats(mu1, c1), GaussianStats(mu2, c2))
    assert ours == pytest.approx(frechet_mpmath(mu1, c1, mu2, c2), rel=1e-5)


def test_gaussian_stats_validation():
    with pytest.raises(ValueError):
        GaussianStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianStats(np.zeros(3), np.eye(2))
    with pytest.raises(ValueError):
        frechet_distance(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 6))
def test_frechet_symmetric_and_self_zero_property(seed, n):
    rng = np.random.default_rng(seed)
    a = GaussianStats(rng.normal(size=n), random_psd(rng, n))
    b = GaussianStats(rng.normal(size=n), random_psd(rng, n))
    assert frechet_distance(a, b) == frechet_distance(b, a)
    assert frechet_distance(a, b) >= 0
    assert frechet_distance(a, a) < 1e-6 * max(1.0, np.trace(a.cov))


# -- surrogate SIFID -------------------------------------------------------------

def test_sifid_identical_zero(source_views):
    assert sifid_surrogate(source_views, source_views) < 1e-6


def test_sifid_symmetric(source_views):
    rng = np.random.default_rng(4)
    other = [img(np.clip(v.rgb + rng.normal(scale=0.05, size=v.rgb.shape), 0, 1), v.mask) for v in source_views]
    assert sifid_surrogate(source_views, other) == sifid_surrogate(other, source_views)


def test_sifid_view_order_invariant(source_views):
    rng = np.random.default_rng(5)
    other = [img(np.clip(v.rgb * 0.8, 0, 1), v.mask) for v in source_views]
    perm = rng.permutation(len(other))
    a = sifid_surrogate(source_views, other)
    b = sifid_surrogate([source_views[i] for i in perm], [other[i] for i in perm])
    assert a == pytest.approx(b, rel=1e-12)


def test_sifid_noise_worse_than_blur(source_views):
    rng = np.random.default_rng(6)
    noise = [img(rng.uniform(size=v.rgb.shape), v.mask) for v in source_views]
    blur = [img(gaussian_filter(v.rgb, sigma=(1, 1, 0)), v.mask) for v in source_views]
    assert sifid_surrogate(source_views, noise) > sifid_surrogate(source_views, blur)


def test_sifid_length_mismatch(source_views):
    with pytest.raises(ValueError):
        sifid_per_view(source_views, source_views[:3])


# -- PSNR ------------------------------------------------------------------------

def test_psnr_identical_exact():
    a = img(np.random.default_rng(7).uniform(size=(8, 8, 3)))
    assert psnr(a, a) == EXACT


def test_psnr_twenty_db():
    a = img(np.zeros((10, 10, 3)))
    b = img(np.full((10, 10, 3), 0.1))
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_formula():
    rng = np.random.default_rng(8)
    a, b = rng.uniform(size=(9, 7, 3)), rng.uniform(size=(9, 7, 3))
    mse = sum((a[i, j, c] - b[i, j, c]) ** 2 for i in range(9) for j in range(7) for c in range(3)) / (9 * 7 * 3)
    assert psnr(img(a), img(b)) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(9)
    base = rng.uniform(size=(32, 32, 3))
    noise = rng.normal(size=base.shape)
    vals = [psnr(img(base + s * noise), img(base)) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_masked_psnr_ignores_background():
    rgb = np.zeros((4, 4, 3))
    mask = np.zeros((4, 4), bool)
    mask[:2] = True
    pred = rgb.copy()
    pred[2:] = 1.0
    assert masked_psnr(img(pred, mask), img(rgb, mask)) == EXACT
    assert psnr(img(pred, mask), img(rgb, mask)) < 10


def test_report_file(tmp_path):
    rep = write_report(tmp_path / "r.json", "psnr", [20.0, EXACT], 20.0, {"seed": 0}, {"a": 1})
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["per_view"] == [20.0, "exact"] and back["config_hash"] == rep["config_hash"]
