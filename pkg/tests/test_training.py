import numpy as np
import pytest

from uphes.penalty_net import backward, clip_by_norm, init_params, log_bounds
from uphes.plant import Mode, upc_eval
from uphes.simulator import evaluate_schedule, simulate
from uphes.training import (Adam, TrainConfig, TrainingSample, _features, _weights,
                            baseline_schedules, constant_weights, evaluate, make_samples,
                            perturb_schedule, recompute_loss, run_pass, split_by_scenario,
                            summarize, train, write_report)

TOY_PRICES = np.array([20.0, 15.0, 60.0, 140.0, 150.0, 90.0])
TOY_POWER = np.array([-7.0, -6.0, 0.0, 8.0, 7.0, 0.0])


@pytest.fixture(scope="module")
def baselines(scenarios, model, config):
    return baseline_schedules(scenarios[:4], model, config)


def _toy_sample(model, config, p=TOY_POWER, prices=TOY_PRICES):
    warm = simulate(p, model, config).trajectory.with_role("warm_start")
    return TrainingSample(prices, warm, 0.0, "0", "toy", "toy")


def _random_theta(H, seed, scale):
    theta = init_params(H, seed)
    rng = np.random.default_rng(seed)
    return theta.with_flat(theta.flat() + scale * rng.standard_normal(theta.flat().size))


# ---------------------------------------------------------------------------
# perturbation
# ---------------------------------------------------------------------------
def test_zero_noise_returns_baseline(baselines, model, config):
    base = baselines[0]
    out = perturb_schedule(base, 0.0, model, config, seed=1)
    for a in ("p", "q", "h", "v", "mode"):
        assert np.array_equal(getattr(out, a), getattr(base, a))


def test_perturbation_preserves_modes_and_physics(baselines, model, config):
    for k, base in enumerate(baselines):
        for level in (0.1, 0.3, 0.5, 0.8, "random"):
            out = perturb_schedule(base, level, model, config, seed=k)
            out.validate()
            assert np.array_equal(out.mode, base.mode)
            assert np.all(np.sign(out.p) == np.sign(base.p))
            for t in range(out.T):
                if out.mode[t] == Mode.IDLE:
                    assert out.q[t] == 0.0
                    continue
                assert abs(out.q[t] - upc_eval(model, out.mode[t], out.p[t], out.h[t])) <= 1e-9
                lo, hi = model.power_bounds(out.mode[t], out.h[t])
                assert lo - 1e-12 <= out.p[t] <= hi + 1e-12
            v_ref = config.v_init + config.dt * np.cumsum(out.q)
            assert np.allclose(out.v, v_ref, rtol=1e-12)
            assert np.all(out.v >= config.v_min) and np.all(out.v <= config.v_max)


def test_perturbation_moves_powers(baselines, model, config):
    base = baselines[0]
    out = perturb_schedule(base, 0.5, model, config, seed=3)
    assert not np.allclose(out.p, base.p)


def test_noise_level_checks(baselines, model, config):
    with pytest.raises(ValueError):
        perturb_schedule(baselines[0], 0.9, model, config)
    with pytest.raises(ValueError):
        perturb_schedule(baselines[0], -0.1, model, config)
    with pytest.raises(ValueError):
        perturb_schedule(baselines[0], "uniform", model, config)


def test_random_levels_are_in_range(scenarios, baselines, model, config):
    s = make_samples(scenarios[:4], baselines, "random", model, config, n_variants=5, seed=2)
    assert len(s) == 20
    lv = np.array([x.level for x in s])
    assert np.all((lv >= 0.1) & (lv <= 0.8))
    assert {x.noise for x in s} == {"random"}
    again = make_samples(scenarios[:4], baselines, "random", model, config, n_variants=5, seed=2)
    assert all(np.array_equal(a.warm.p, b.warm.p) for a, b in zip(s, again))


def test_fixed_level_plan(scenarios, baselines, model, config):
    s = make_samples(scenarios[:2], baselines, [0.1, 0.8], model, config)
    assert [x.noise for x in s] == ["0.1", "0.8", "0.1", "0.8"]


def test_split_keeps_scenarios_together(scenarios, baselines, model, config):
    s = make_samples(scenarios[:4], baselines, "random", model, config, n_variants=3)
    tr, va = split_by_scenario(s, 0.2, seed=0)
    assert len(tr) + len(va) == len(s)
    assert {x.scenario for x in tr}.isdisjoint({x.scenario for x in va})
    assert len({x.scenario for x in va}) == 1


# ---------------------------------------------------------------------------
# gradients and optimizer
# ---------------------------------------------------------------------------
def _loss_and_grad(theta, s, model, config, glob, cfg):
    pw, cache = _weights(theta, _features(theta, s), cfg)
    res, g = run_pass(s, pw, model, config, glob, cfg.K, cfg.gamma, need_grad=True)
    return -res.profit, backward(theta, cache, -g).flat()


def test_end_to_end_gradient_matches_finite_differences(model, config, glob):
    s = _toy_sample(model, config)
    cfg = TrainConfig(K=3, gamma=2.0)
    for seed in range(3):
        theta = _random_theta(8, seed, 0.3)
        L, G = _loss_and_grad(theta, s, model, config, glob, cfg)
        d = np.random.default_rng(seed).standard_normal(G.size)
        d /= np.linalg.norm(d)
        eps = 1e-3
        lp = _loss_and_grad(theta.with_flat(theta.flat() + eps * d), s, model, config, glob, cfg)
        lm = _loss_and_grad(theta.with_flat(theta.flat() - eps * d), s, model, config, glob, cfg)
        fd = (lp[0] - lm[0]) / (2 * eps)
        assert abs(G @ d - fd) <= 1e-2 * abs(fd)


def test_one_step_descent(model, config, glob):
    s = _toy_sample(model, config)
    cfg = TrainConfig(K=1, gamma=2.0, lr=1e-2)
    wins = 0
    for seed in range(10):
        theta = _random_theta(8, seed, 0.3)
        L0, G = _loss_and_grad(theta, s, model, config, glob, cfg)
        g, _ = clip_by_norm(G, cfg.clip)
        step = Adam(G.size, cfg.lr).step(theta.flat(), g)
        L1, _ = _loss_and_grad(theta.with_flat(step), s, model, config, glob, cfg)
        wins += L1 <= L0
    assert wins >= 8


def test_adam_first_step_is_sign_scaled():
    opt = Adam(3, 0.1)
    out = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    assert np.allclose(out, [-0.1, 0.1, 0.0], atol=1e-8)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(clip=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch="full")


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def small_set(scenarios, baselines, model, config):
    return make_samples(scenarios[:4], baselines, "random", model, config, n_variants=1, seed=5)


def _strip(rows):
    return [{k: v for k, v in r.items() if k != "seconds"} for r in rows]


def test_loss_identity(small_set, model, config, glob):
    cfg = TrainConfig(epochs=2, lr=1e-2, K=1, seed=0)
    tr, va = split_by_scenario(small_set, 0.2, 0)
    _, log = train(tr, init_params(4, 0), cfg, model, config, glob, val_samples=va)
    for r in log.rows:
        assert recompute_loss(log, r["epoch"], tr, model, config) == r["loss"]


def test_zero_learning_rate_is_a_no_op(small_set, model, config, glob, tmp_path):
    theta0 = init_params(4, 1)
    cfg = TrainConfig(epochs=3, lr=0.0, K=1, early_stop=10)
    theta, log = train(small_set, theta0, cfg, model, config, glob)
    assert np.array_equal(theta.flat(), theta0.flat())
    assert len({r["loss"] for r in log.rows}) == 1
    assert len({r["val_profit"] for r in log.rows}) == 1
    path = tmp_path / "log.csv"
    log.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,val_profit,lr,grad_norm,seconds"
    assert len(lines) == 4


def test_early_stopping_returns_best(small_set, model, config, glob):
    theta0 = init_params(4, 2)
    cfg = TrainConfig(epochs=20, lr=0.0, K=1, early_stop=2)
    theta, log = train(small_set, theta0, cfg, model, config, glob)
    assert log.stopped_early and len(log.rows) == 2 and log.best_epoch == 0
    assert np.array_equal(theta.flat(), theta0.flat())


def test_plateau_halves_learning_rate(small_set, model, config, glob, monkeypatch):
    import uphes.training as tr
    monkeypatch.setattr(tr, "mean_profit", lambda *a, **k: 0.0)   # validation never improves
    cfg = TrainConfig(epochs=4, lr=1e-2, K=1, plateau_patience=2, early_stop=10)
    _, log = tr.train(small_set, init_params(4, 0), cfg, model, config, glob)
    assert [r["lr"] for r in log.rows] == [1e-2, 1e-2, 5e-3, 5e-3]


def test_training_is_reproducible(small_set, model, config, glob):
    cfg = TrainConfig(epochs=2, lr=1e-2, K=1, seed=3)
    a = train(small_set, init_params(4, 0), cfg, model, config, glob)
    b = train(small_set, init_params(4, 0), cfg, model, config, glob)
    assert _strip(a[1].rows) == _strip(b[1].rows)
    assert np.array_equal(a[0].flat(), b[0].flat())


def test_mean_batch_mode(small_set, model, config, glob):
    cfg = TrainConfig(epochs=1, lr=1e-2, K=1, batch="mean")
    _, log = train(small_set, init_params(4, 0), cfg, model, config, glob)
    assert len(log.rows) == 1 and np.isfinite(log.rows[0]["loss"])


def test_empty_training_set_raises(model, config, glob):
    with pytest.raises(ValueError):
        train([], init_params(4, 0), TrainConfig(), model, config, glob)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def test_raw_evaluation_is_simulation(small_set, model, config, glob):
    recs = evaluate("raw", small_set, model, config, glob)
    for r, s in zip(recs, small_set):
        assert r.profit == evaluate_schedule(s.warm.p, s.prices, model, config).profit


def test_constant_weights_are_the_midpoint():
    pw = constant_weights(24, 1e-3, 1e3, 2.0, 3)
    mid, _ = log_bounds(1e-3, 1e3)
    assert np.all(pw.stack() == np.exp(mid))
    assert pw.gamma == 2.0 and pw.K == 3


def test_no_nn_matches_untrained_network(small_set, model, config, glob):
    a = evaluate("no_nn", small_set[:2], model, config, glob)
    b = evaluate("dfl", small_set[:2], model, config, glob, theta=init_params(4, 0))
    assert [r.profit for r in a] == pytest.approx([r.profit for r in b], rel=1e-12)


def test_no_rec_is_a_single_pass(small_set, model, config, glob):
    theta = init_params(4, 0)
    a = evaluate("no_rec", small_set[:2], model, config, glob, theta=theta)
    b = evaluate("dfl", small_set[:2], model, config, glob, theta=theta, K=1)
    assert [r.profit for r in a] == [r.profit for r in b]


def test_evaluate_input_checks(small_set, model, config, glob):
    with pytest.raises(ValueError):
        evaluate("raw", [], model, config, glob)
    with pytest.raises(ValueError):
        evaluate("miqp", small_set, model, config, glob)
    with pytest.raises(ValueError):
        evaluate("dfl", small_set, model, config, glob)


def test_report_rows(small_set, model, config, glob, tmp_path):
    recs = evaluate("raw", small_set, model, config, glob)
    recs += evaluate("no_nn", small_set, model, config, glob)
    rows = summarize(recs)
    assert [r["method"] for r in rows] == ["raw", "no_nn"]
    pr = np.array([r.profit for r in recs[:len(small_set)]])
    assert rows[0]["profit_mean"] == pytest.approx(pr.mean(), rel=1e-14)
    assert rows[0]["profit_std"] == pytest.approx(pr.std(ddof=1), rel=1e-12)
    path = tmp_path / "r.csv"
    write_report(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,profit_mean,profit_std,time_s" and len(lines) == 3
