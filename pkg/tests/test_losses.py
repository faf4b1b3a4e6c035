import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texfield.losses import LossConfig, loss_app, loss_mse, total_loss
from texfield.renderer import ImageBuffer

from oracles import central_diff, mse_loop


def img(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    return ImageBuffer(rgb, np.ones(rgb.shape[:2], bool))


def rand_img(seed, h=16, w=16):
    return img(np.random.default_rng(seed).uniform(size=(h, w, 3)))


def test_mse_identical_zero():
    a = rand_img(0)
    loss, g = loss_mse(a, a)
    assert loss == 0.0 and not g.any()


@pytest.mark.parametrize("shape", [(1, 1), (3, 5), (8, 8)])
def test_mse_ones_vs_zeros(shape):
    loss, _ = loss_mse(img(np.ones(shape + (3,))), img(np.zeros(shape + (3,))))
    assert loss == pytest.approx(3.0)


def test_mse_matches_loop_and_finite_differences():
    a, b = rand_img(1, 4, 4), rand_img(2, 4, 4)
    loss, g = loss_mse(a, b)
    assert abs(loss - mse_loop(a.rgb, b.rgb)) < 1e-7
    x = a.rgb.copy()
    num = central_diff(lambda: loss_mse(img(x), b)[0], x)
    np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-9)


def test_mse_size_mismatch():
    with pytest.raises(ValueError):
        loss_mse(rand_img(0, 4, 4), rand_img(0, 4, 5))


def test_app_identical_zero():
    a = rand_img(3)
    loss, g = loss_app(a, a)
    assert loss == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_app_sensitive_to_channel_shift():
    a = rand_img(4)
    b = img(np.clip(a.rgb + [0.1, 0, 0], 0, 1.2))
    assert loss_app(b, a)[0] > 0


def test_app_gradient_matches_finite_differences():
    a, b = rand_img(5), rand_img(6)
    cfg = LossConfig()
    _, g = loss_app(a, b, cfg)
    x = a.rgb.copy()
    num = central_diff(lambda: loss_app(img(x), b, cfg)[0], x, h=1e-5)
    err = np.abs(g - num).max() / max(np.abs(num).max(), 1e-7)
    assert err < 1e-4


def test_total_without_app_is_mse():
    preds, gts = [rand_img(7), rand_img(8)], [rand_img(9), rand_img(10)]
    total, grads, parts = total_loss(preds, gts, LossConfig(delta_app=0.0))
    expect = np.mean([loss_mse(p, g)[0] for p, g in zip(preds, gts)])
    assert total == expect and parts["app"] == 0.0
    np.testing.assert_array_equal(grads[0], loss_mse(preds[0], gts[0])[1] / 2)


def test_total_identical_batch_zero():
    views = [rand_img(11), rand_img(12)]
    assert total_loss(views, views)[0] == 0.0


def test_total_linear_in_weight():
    p, g = rand_img(13), rand_img(14)
    total, _, _ = total_loss([p], [g], LossConfig(delta_app=2.0))
    assert abs(total - (loss_mse(p, g)[0] + 2.0 * loss_app(p, g)[0])) < 1e-9


def test_total_batched_gradient_matches_per_view():
    preds = [rand_img(15, 8, 8), rand_img(16, 12, 12), rand_img(17, 8, 8)]
    gts = [rand_img(18, 8, 8), rand_img(19, 12, 12), rand_img(20, 8, 8)]
    cfg = LossConfig(delta_app=0.3)
    _, grads, _ = total_loss(preds, gts, cfg)
    for p, g, got in zip(preds, gts, grads):
        expect = (loss_mse(p, g)[1] + 0.3 * loss_app(p, g, cfg)[1]) / 3
        np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-14)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(delta_app=-1)
    with pytest.raises(ValueError):
        LossConfig(app_variant="vit")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), delta=st.floats(0, 5))
def test_total_loss_nonnegative_property(seed, delta):
    rng = np.random.default_rng(seed)
    p, g = img(rng.uniform(size=(8, 8, 3))), img(rng.uniform(size=(8, 8, 3)))
    total, grads, parts = total_loss([p], [g], LossConfig(delta_app=delta))
    assert total >= 0 and parts["mse"] >= 0 and parts["app"] >= 0
    assert np.all(np.isfinite(grads[0]))
