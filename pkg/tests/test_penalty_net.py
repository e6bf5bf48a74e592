import numpy as np
import pytest

from uphes.penalty_net import (FeatureNorm, NetParams, backward, build_features, clip_by_norm,
                               forward, init_params, load_checkpoint, log_bounds,
                               predict_weights, save_checkpoint)
from uphes.simulator import simulate


def _random_theta(H, seed, scale=1.0):
    theta = init_params(H, seed)
    rng = np.random.default_rng(seed + 100)
    return theta.with_flat(scale * rng.standard_normal(theta.flat().size))


def test_zero_parameters_give_unit_weights():
    theta = init_params(4, 0)
    theta = theta.with_flat(np.zeros(theta.flat().size))
    X = np.random.default_rng(0).standard_normal((24, 4))
    w, _ = forward(theta, X)
    assert log_bounds(theta.w_lo, theta.w_hi)[0] == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(w, 1.0, rtol=0, atol=1e-12)


def test_initial_prediction_is_constant_midpoint():
    theta = init_params(32, 3)
    X = np.random.default_rng(1).standard_normal((24, 4))
    w, _ = forward(theta, X)
    mid, _ = log_bounds(theta.w_lo, theta.w_hi)
    assert np.allclose(w, np.exp(mid), rtol=1e-12)
    assert np.all((w >= theta.w_lo) & (w <= theta.w_hi))


def test_causality():
    theta = _random_theta(6, 0)
    X = np.random.default_rng(2).standard_normal((24, 4))
    w, _ = forward(theta, X)
    Y = X.copy()
    Y[10:] = Y[10:][::-1]
    wy, _ = forward(theta, Y)
    assert np.array_equal(w[:10], wy[:10])
    assert not np.allclose(w[10:], wy[10:])


def test_gradient_matches_finite_differences():
    theta = _random_theta(8, 1, scale=0.5)
    X = np.random.default_rng(3).standard_normal((24, 4))
    w, cache = forward(theta, X)
    g = backward(theta, cache, np.ones_like(w)).flat()
    base = theta.flat()
    eps = 1e-5
    fd = np.zeros_like(base)
    for k in range(base.size):
        e = np.zeros_like(base)
        e[k] = eps
        fd[k] = (forward(theta.with_flat(base + e), X)[0].sum()
                 - forward(theta.with_flat(base - e), X)[0].sum()) / (2 * eps)
    big = np.abs(fd) > 1e-6
    assert np.all(np.abs(g - fd)[big] <= 1e-4 * np.abs(fd[big]))
    assert np.all(np.abs(g - fd)[~big] <= 1e-8)


def test_zero_upstream_gives_zero_gradient():
    theta = _random_theta(5, 2)
    X = np.random.default_rng(4).standard_normal((12, 4))
    _, cache = forward(theta, X)
    assert np.all(backward(theta, cache, np.zeros((12, 3))).flat() == 0.0)


def test_backward_input_checks():
    theta = init_params(3, 0)
    with pytest.raises(ValueError):
        backward(theta, None, np.zeros((24, 3)))
    _, cache = forward(theta, np.zeros((24, 4)))
    with pytest.raises(ValueError):
        backward(theta, cache, np.zeros((23, 3)))


def test_init_is_deterministic_and_sized():
    a, b = init_params(16, 7), init_params(16, 7)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_params(16, 8).flat())
    a.check()
    H = 16
    assert a.flat().size == 4 * H * 4 + 4 * H * H + 4 * H + 3 * H + 3
    assert np.all(a.b[H:2 * H] == 1.0)


def test_hidden_size_one_works():
    theta = init_params(1, 0)
    w, cache = forward(theta, np.ones((5, 4)))
    assert w.shape == (5, 3)
    assert backward(theta, cache, np.ones((5, 3))).flat().shape == theta.flat().shape
    with pytest.raises(ValueError):
        init_params(0, 0)


def test_weights_stay_in_bounds_for_any_parameters():
    rng = np.random.default_rng(5)
    for seed in range(20):
        theta = _random_theta(6, seed, scale=10.0)
        w, _ = forward(theta, 10.0 * rng.standard_normal((24, 4)))
        assert np.all(w >= theta.w_lo) and np.all(w <= theta.w_hi)


def test_non_finite_features_raise():
    theta = init_params(4, 0)
    X = np.zeros((24, 4))
    X[3, 2] = np.inf
    with pytest.raises(ValueError):
        forward(theta, X)
    with pytest.raises(ValueError):
        forward(theta, np.zeros((24, 3)))


def test_clip_by_norm():
    g = np.array([3.0, 4.0])
    out, n = clip_by_norm(g, 1.0)
    assert n == 5.0
    assert np.allclose(out, [0.6, 0.8], rtol=1e-15)
    out, n = clip_by_norm(g, 10.0)
    assert out is g and n == 5.0
    with pytest.raises(ValueError):
        clip_by_norm(g, 0.0)


def test_checkpoint_round_trip(tmp_path, model, config):
    theta = _random_theta(7, 4)
    theta = NetParams(*theta.arrays(), norm=FeatureNorm.from_plant(model, config),
                      w_lo=1e-2, w_hi=1e2)
    path = tmp_path / "theta.npz"
    save_checkpoint(theta, path, extra={"epoch": 3})
    back = load_checkpoint(path)
    assert np.array_equal(back.flat(), theta.flat())
    assert back.norm == theta.norm
    assert (back.w_lo, back.w_hi) == (1e-2, 1e2)


def test_check_rejects_bad_shapes():
    theta = init_params(4, 0)
    bad = NetParams(theta.Wx[:, :3], theta.Wh, theta.b, theta.Wo, theta.bo)
    with pytest.raises(ValueError):
        bad.check()
    with pytest.raises(ValueError):
        theta.with_flat(np.zeros(3))


def test_features_and_prediction(model, config, day_prices):
    tr = simulate(np.zeros(24), model, config).trajectory
    norm = FeatureNorm.from_plant(model, config)
    X = build_features(day_prices, tr, norm)
    assert X.shape == (24, 4)
    assert np.allclose(X[:, 0], day_prices / norm.price)
    assert np.all(X[:, 1] == 0.0) and np.all(X[:, 2] == 0.0)
    assert np.allclose(X[:, 3], (tr.h - norm.h_min) / (norm.h_max - norm.h_min))
    pw = predict_weights(init_params(4, 0, norm), X, gamma=2.0, K=3)
    assert np.allclose(pw.stack(), 1.0)
