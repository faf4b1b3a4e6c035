import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texfield import layers as L
from texfield.adam import AdamState, adam_step
from texfield.checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from texfield.field_net import FieldNet, FieldNetConfig, StaleTapeError

from oracles import aggregate_loop, block_loop, central_diff, conv_loop, mlp_loop


def rand_block(rng, k, scale=0.3):
    w1 = rng.normal(scale=scale, size=(3, 3, 3, k, k))
    b1 = rng.normal(scale=scale, size=(3, k))
    w2 = rng.normal(scale=scale, size=(3, 3, 3, 3 * k, k))
    b2 = rng.normal(scale=scale, size=(3, k))
    return w1, b1, w2, b2


def small_net(depth=1, seed=0, cin=5, width=4, hidden=6, dtype=np.float64):
    cfg = FieldNetConfig(in_channels=cin, width=width, depth=depth, hidden=hidden, resolution=(6, 6))
    net = FieldNet.init(cfg, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 100)
    for name, p in net.params.items():
        if name.endswith(".b"):
            p += rng.normal(scale=0.1, size=p.shape)
    return net


# -- layers -------------------------------------------------------------------

def test_conv_matches_loop():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5, 5, 2))
    w = rng.normal(size=(3, 3, 3, 2, 4))
    b = rng.normal(size=(3, 4))
    np.testing.assert_allclose(L.conv_forward(x, w, b)[0], conv_loop(x, w, b), atol=1e-12)


def test_aggregation_matches_loop():
    h = np.random.default_rng(1).normal(size=(3, 4, 4, 2))
    np.testing.assert_allclose(L.aggregate_planes(h), aggregate_loop(h), atol=1e-12)


def test_block_matches_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4, 4, 2))
    params = rand_block(rng, 2)
    np.testing.assert_allclose(L.triplane_block_forward(x, *params)[0], block_loop(x, *params), atol=1e-6)


def test_block_zero_input_zero_output():
    rng = np.random.default_rng(3)
    w1, _, w2, _ = rand_block(rng, 3)
    zb = np.zeros((3, 3))
    out, _ = L.triplane_block_forward(np.zeros((3, 4, 4, 3)), w1, zb, w2, zb)
    np.testing.assert_array_equal(out, 0.0)


def test_block_constant_input_identity_conv():
    # identity-centered conv1, constant planes: profiles equal the constant
    k, c = 2, np.array([0.7, -0.3])
    x = np.broadcast_to(c, (3, 5, 5, k)).copy()
    w1 = np.zeros((3, 3, 3, k, k))
    w1[:, 1, 1] = np.eye(k)
    cat = L.aggregate_planes(L.leaky_relu(L.conv_forward(x, w1, np.zeros((3, k)))[0]))
    np.testing.assert_allclose(cat, np.broadcast_to(np.concatenate([L.leaky_relu(c)] * 3), cat.shape))
    w2 = np.zeros((3, 1, 1, 3 * k, k))
    w2[:, 0, 0, :k] = np.eye(k)
    out, _ = L.triplane_block_forward(x, w1, np.zeros((3, k)), np.pad(w2, ((0, 0), (1, 1), (1, 1), (0, 0), (0, 0))),
                                      np.zeros((3, k)))
    np.testing.assert_allclose(out, x + L.leaky_relu(c))


def test_block_residual_identity_when_second_conv_zero():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 4, 4, 3))
    w1, b1, w2, b2 = rand_block(rng, 3)
    out, _ = L.triplane_block_forward(x, w1, b1, np.zeros_like(w2), np.zeros_like(b2))
    np.testing.assert_array_equal(out, x)


def test_block_rejects_mismatched_planes():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        L.triplane_block_forward(np.zeros((3, 4, 5, 2)), *rand_block(rng, 2))


def test_block_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 4, 4, 2))
    params = list(rand_block(rng, 2))
    up = rng.normal(size=x.shape)
    _, cache = L.triplane_block_forward(x, *params)
    dx, dparams = L.triplane_block_backward(up, cache, params[0], params[2])

    def f():
        return float(np.sum(up * L.triplane_block_forward(x, *params)[0]))
    np.testing.assert_allclose(dx, central_diff(f, x), rtol=1e-4, atol=1e-7)
    for p, g in zip(params, dparams):
        np.testing.assert_allclose(g, central_diff(f, p), rtol=1e-4, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(x=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_sigmoid_range_property(x):
    s = L.sigmoid(np.array(x))
    assert np.all(s >= 0) and np.all(s <= 1)
    assert np.all(np.isfinite(s))


# -- network ------------------------------------------------------------------

def test_default_channels():
    cfg = FieldNetConfig(in_channels=50)
    net = FieldNet.init(cfg)
    assert cfg.width == 64 and cfg.out_channels == 12
    assert net.params["reduce.0.w"].shape[-1] == 64
    out, _ = net.forward(np.zeros((3, 4, 4, 50), dtype=np.float32))
    assert out.shape == (3, 4, 4, 12)


def test_depth_zero_composition():
    net = small_net(depth=0)
    p = net.params
    x = np.random.default_rng(0).normal(size=(3, 6, 6, 5))
    h = L.leaky_relu(conv_loop(x, p["reduce.0.w"], p["reduce.0.b"]))
    h = L.leaky_relu(conv_loop(h, p["reduce.1.w"], p["reduce.1.b"]))
    np.testing.assert_allclose(net.forward(x)[0], conv_loop(h, p["head.w"], p["head.b"]), atol=1e-10)


def test_forward_is_pure():
    net = small_net(depth=2)
    x = np.random.default_rng(1).normal(size=(3, 6, 6, 5))
    a, _ = net.forward(x)
    b, _ = net.forward(x)
    assert np.array_equal(a, b)


def test_color_zero_weights_is_half():
    net = small_net()
    for v in net.params.values():
        v[...] = 0
    rgb, _ = net.color(np.random.default_rng(0).normal(size=(4, 36)))
    np.testing.assert_array_equal(rgb, 0.5)


def test_color_bias_saturation():
    net = small_net()
    for v in net.params.values():
        v[...] = 0
    net.params["mlp.1.b"][:] = [10.0, -10.0, 0.0]
    np.testing.assert_allclose(net.color(np.ones(36))[0], [1, 0, 0.5], atol=1e-4)


def test_color_matches_loop():
    net = small_net()
    x = np.random.default_rng(2).normal(size=(5, 36))
    p = net.params
    np.testing.assert_allclose(net.color(x)[0], mlp_loop(x, p["mlp.0.w"], p["mlp.0.b"], p["mlp.1.w"], p["mlp.1.b"]),
                               atol=1e-6)


def test_unused_parameters_get_zero_gradient():
    # a zero upstream gradient on the planes leaves every conv gradient at zero
    net = small_net()
    x = np.random.default_rng(3).normal(size=(3, 6, 6, 5))
    _, tape = net.forward(x)
    grads = net.backward(tape, np.zeros((3, 6, 6, 12)))
    assert all(np.all(g == 0) for g in grads.values())


def test_one_by_one_conv_gradient_is_input_times_upstream():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 5, 5, 2))
    w = rng.normal(size=(3, 1, 1, 2, 3))
    y, cols = L.conv_forward(x, w, np.zeros((3, 3)))
    up = rng.normal(size=y.shape)
    _, dw, _ = L.conv_backward(up, cols, x.shape, w)
    np.testing.assert_allclose(dw[:, 0, 0], np.einsum("pijc,pijo->pco", x, up), atol=1e-12)


def test_full_net_gradients_match_finite_differences():
    net = small_net(depth=1, cin=3, width=3, hidden=5)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 6, 6, 3))
    up = rng.normal(size=(3, 6, 6, 12))
    _, tape = net.forward(x)
    grads = net.backward(tape, up)

    def f():
        return float(np.sum(up * net.forward(x)[0]))
    for name, p in net.params.items():
        if name.startswith("mlp."):
            continue
        np.testing.assert_allclose(grads[name], central_diff(f, p), rtol=1e-4, atol=1e-6, err_msg=name)


def test_stale_tape_rejected():
    net = small_net()
    x = np.zeros((3, 6, 6, 5))
    _, tape = net.forward(x)
    net.mark_updated()
    with pytest.raises(StaleTapeError):
        net.backward(tape, np.zeros((3, 6, 6, 12)))


def test_wrong_input_channels():
    with pytest.raises(ValueError):
        small_net().forward(np.zeros((3, 6, 6, 4)))


def test_learning_rate_groups():
    lrs = small_net().learning_rates(1e-2, 1e-3)
    assert lrs["mlp.0.w"] == 1e-3 and lrs["head.w"] == 1e-2 and lrs["trunk.0.conv2.b"] == 1e-2


@settings(max_examples=10, deadline=None)
@given(cin=st.integers(1, 8), depth=st.integers(0, 3), hidden=st.integers(1, 16), seed=st.integers(0, 50))
def test_parameter_count_determinism_property(cin, depth, hidden, seed):
    cfg = FieldNetConfig(in_channels=cin, width=4, depth=depth, hidden=hidden)
    a, b = FieldNet.init(cfg, seed), FieldNet.init(cfg, seed)
    assert a.n_parameters() == b.n_parameters()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    other = FieldNet.init(cfg, seed + 1)
    assert other.n_parameters() == a.n_parameters()


# -- optimizer ----------------------------------------------------------------

def test_adam_first_step():
    params = {"w": np.array([1.0])}
    state = AdamState()
    adam_step(params, {"w": 2 * params["w"]}, state, 0.1)
    np.testing.assert_allclose(params["w"], 0.9, atol=1e-7)


def test_adam_zero_gradient():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state, 0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.step == 1


def test_adam_deterministic_trajectory():
    def run():
        params = {"w": np.array([1.0, 3.0])}
        state = AdamState()
        traj = []
        for _ in range(20):
            adam_step(params, {"w": 2 * params["w"]}, state, {"w": 0.05})
            traj.append(params["w"].copy())
        return np.array(traj)
    assert np.array_equal(run(), run())


def test_adam_non_finite_aborts_without_update():
    params = {"w": np.array([1.0, 2.0])}
    state = AdamState()
    with pytest.raises(FloatingPointError, match=r"w at index \(1,\)"):
        adam_step(params, {"w": np.array([0.1, np.inf])}, state, 0.1)
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])
    assert state.step == 0


# -- checkpoint ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = FieldNet.init(FieldNetConfig(in_channels=7, width=4, depth=2, hidden=5, feature_dim=2, feature_seed=3))
    p = tmp_path / "a.ttck"
    save_checkpoint(net, p)
    back = load_checkpoint(p)
    assert back.config == net.config
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
    assert checkpoint_bytes(back) == p.read_bytes()


def test_checkpoint_bad_magic():
    data = bytearray(checkpoint_bytes(FieldNet.init(FieldNetConfig(in_channels=3, width=2, depth=0, hidden=2))))
    data[:4] = b"NOPE"
    with pytest.raises(CheckpointError, match="bad checkpoint header"):
        parse_checkpoint(bytes(data))


def test_checkpoint_truncated():
    data = checkpoint_bytes(FieldNet.init(FieldNetConfig(in_channels=3, width=2, depth=0, hidden=2)))
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:-3])
