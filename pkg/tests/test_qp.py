import numpy as np
import pytest

from uphes.approx import local_linearize
from uphes.errors import BuildError, SolverError
from uphes.qp import (PenaltyWeights, QpTolerances, W_HI, build_penalized_qp, differentiate_qp,
                      qp_jvp, recursive_refine, refine_backward, solve_dense, solve_qp)
from uphes.simulator import evaluate_schedule, simulate
from uphes.training import baseline_schedules, make_samples


def _warm(p_hat, model, config):
    return simulate(np.asarray(p_hat, dtype=float), model, config).trajectory.with_role("warm_start")


@pytest.fixture(scope="module")
def interior(model, config):
    """A consistent 24-hour trajectory strictly inside both envelopes."""
    p = np.zeros(24)
    p[2:6] = -7.0
    p[17:20] = 8.0
    return _warm(p, model, config)


@pytest.fixture(scope="module")
def noisy(scenarios, model, config):
    base = baseline_schedules(scenarios[:1], model, config)
    return make_samples(scenarios[:1], base, [0.3], model, config, n_variants=1, seed=4)[0]


def _qp(prices, x, w, model, config, glob):
    return build_penalized_qp(prices, x, local_linearize(model, config, x), w, config, glob)


# ---------------------------------------------------------------------------
# penalty weights
# ---------------------------------------------------------------------------
def test_penalty_weight_invariants():
    w = PenaltyWeights.constant(24)
    assert w.T == 24 and np.all(w.w_p == 1.0)
    assert np.allclose(w.scaled(2)[0], 4.0)
    assert w.stack().shape == (3, 24)
    with pytest.raises(ValueError):
        PenaltyWeights.constant(24, 2e3)
    with pytest.raises(ValueError):
        PenaltyWeights.constant(24, 1e-4)
    with pytest.raises(ValueError):
        PenaltyWeights.constant(24, gamma=1.0)
    with pytest.raises(ValueError):
        PenaltyWeights.constant(24, K=0)
    with pytest.raises(ValueError):
        PenaltyWeights(np.ones(3), np.ones(3), np.ones(4))


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------
def test_build_rejects_bad_dimensions(interior, model, config, glob, day_prices):
    lin = local_linearize(model, config, interior)
    with pytest.raises(BuildError):
        build_penalized_qp(day_prices[:23], interior, lin, PenaltyWeights.constant(24), config,
                           glob)
    with pytest.raises(BuildError):
        build_penalized_qp(day_prices, interior, lin, PenaltyWeights.constant(23), config, glob)


def test_index_map_covers_each_variable_once(interior, model, config, glob, day_prices):
    qp = _qp(day_prices, interior, PenaltyWeights.constant(24), model, config, glob)
    idx = np.concatenate([qp.index[k] for k in "pqhv"])
    assert np.array_equal(np.sort(idx), np.arange(qp.n))
    assert qp.idx("h", 5) == qp.index["h"][5]
    assert np.all(qp.Qd >= 0.0)            # convex in minimization form


def test_dump_lists_rows(interior, model, config, glob, day_prices):
    qp = _qp(day_prices, interior, PenaltyWeights.constant(24), model, config, glob)
    text = qp.dump()
    assert "('v_target', 23)" in text and "('flow', 2)" in text
    assert text.count("\n") == 2 + qp.n + len(qp.eq_rows) + len(qp.in_rows)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------
def test_trust_region_collapse(interior, model, config, glob, day_prices):
    lam = day_prices
    big = _qp(lam, interior, (np.full(24, 1e6),) * 3, model, config, glob)
    s = solve_qp(big)
    assert s.ok and np.max(np.abs(s.x[:24] - interior.p)) <= 1e-3
    # at the weight cap the move is bounded by the price pull on the power penalty
    cap = _qp(lam, interior, PenaltyWeights.constant(24, W_HI), model, config, glob)
    s = solve_qp(cap)
    pull = np.max(np.abs(lam - 2.0 * config.c_op * interior.p)) / (2.0 * W_HI)
    assert s.ok and np.max(np.abs(s.x[:24] - interior.p)) <= pull


def test_all_idle_is_fully_locked(model, config, glob, day_prices):
    x = _warm(np.zeros(24), model, config)
    qp = _qp(day_prices, x, PenaltyWeights.constant(24), model, config, glob)
    s = solve_qp(qp)
    assert s.ok
    assert np.max(np.abs(s.x[:48])) <= 1e-12
    assert abs(s.objective) <= 1e-8


def _toy(model, config, glob, w, lam=(-10.0, 90.0)):
    x = _warm([-8.0, 0.0], model, config)
    lam = np.array(lam)
    lin = local_linearize(model, config, x)
    qp = build_penalized_qp(lam, x, lin, w, config, glob)
    return x, lam, lin, qp


def _toy_closed_form(x, lam, lin, config, w):
    """Optimal pump power of the 2-hour toy by stationarity of a 1-D quadratic."""
    w_p, w_q, w_h = w[0][0], w[1][0], w[2][1]
    a = lin.xi_q[0, 0]
    kq = lin.xi_q[0, 1] * x.h[0] + lin.xi_q[0, 2]
    s = config.dt * a / lin.xi_v[1, 0]
    kh = (config.v_init + config.dt * kq - lin.xi_v[1, 1]) / lin.xi_v[1, 0]
    dt = config.dt_hours
    num = (dt * lam[0] + 2 * w_p * x.p[0] - 2 * w_q * a * (kq - x.q[0])
           - 2 * w_h * s * (kh - x.h[1]))
    den = 2 * dt * config.c_op + 2 * w_p + 2 * w_q * a * a + 2 * w_h * s * s
    return num / den, den


def test_two_hour_toy_matches_closed_form(model, config, glob):
    w = (np.array([0.7, 0.7]), np.array([0.4, 0.4]), np.array([0.9, 0.9]))
    x, lam, lin, qp = _toy(model, config, glob, w)
    s = solve_qp(qp)
    p_star, _ = _toy_closed_form(x, lam, lin, config, w)
    assert s.ok and not s.active.any()          # interior optimum
    assert s.x[0] == pytest.approx(p_star, rel=1e-8)
    assert s.x[1] == 0.0 and s.x[3] == 0.0


def test_decoupled_stationarity(model, config, glob):
    # without flow and head penalties only the power term shapes the optimum
    w = (np.array([2.0, 2.0]), np.zeros(2), np.zeros(2))
    x, lam, lin, qp = _toy(model, config, glob, w)
    s = solve_qp(qp)
    dt = config.dt_hours
    closed = (dt * lam[0] + 2 * 2.0 * x.p[0]) / (2 * dt * config.c_op + 2 * 2.0)
    assert s.ok and s.x[0] == pytest.approx(closed, rel=1e-8)


def test_closed_form_derivative(model, config, glob):
    w = (np.array([0.7, 0.7]), np.array([0.4, 0.4]), np.array([0.9, 0.9]))
    x, lam, lin, qp = _toy(model, config, glob, w)
    s = solve_qp(qp)
    J = differentiate_qp(s, qp)
    p_star, den = _toy_closed_form(x, lam, lin, config, w)
    # d(num/den)/dw_p = (2 p_hat - 2 p*) / den
    assert J[0, 0] == pytest.approx((2 * x.p[0] - 2 * p_star) / den, rel=1e-7)


def test_infeasible_equalities():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = np.array([0.0, 1.0])
    *_, status, _ = solve_dense(np.ones(2), np.zeros(2), A, b, np.zeros((0, 2)), np.zeros(0))
    assert status == "infeasible"


def test_kkt_residuals_within_acceptance(noisy, model, config, glob):
    qp = _qp(noisy.prices, noisy.warm, PenaltyWeights.constant(24), model, config, glob)
    s = solve_qp(qp)
    assert s.ok and max(s.kkt.values()) <= QpTolerances().accept


def _random_feasible(qp, x_star, glob, config, rng, n, scale):
    """Feasible points: perturb the free powers, clip to the envelope, complete the equalities."""
    T, lin = qp.T, qp.lin
    out = []
    for _ in range(20 * n):
        p = x_star[:T] + rng.normal(0.0, scale, T)
        q, h, v = np.zeros(T), np.zeros(T), np.zeros(T)
        v_prev, h[0] = config.v_init, qp.b[0]
        for t in range(T):
            if t > 0:
                h[t] = (v_prev - lin.xi_v[t, 1]) / lin.xi_v[t, 0]
            if qp.active[t]:
                lo, hi = glob.power_bounds(1 if x_star[t] > 0 else 2, h[t])
                p[t] = min(max(p[t], lo), hi)
                q[t] = lin.xi_q[t] @ [p[t], h[t], 1.0]
            else:
                p[t] = 0.0
            v[t] = v_prev + config.dt * q[t]
            v_prev = v[t]
        x = np.concatenate([p, q, h, v])
        if np.all(qp.G @ x <= qp.g + 1e-9) and np.max(np.abs(qp.A @ x - qp.b)) <= 1e-6:
            out.append(x)
            if len(out) == n:
                break
    return out


def test_optimum_beats_random_feasible_points(noisy, model, config, glob, rng):
    qp = _qp(noisy.prices, noisy.warm, PenaltyWeights.constant(24), model, config, glob)
    s = solve_qp(qp)
    pts = _random_feasible(qp, s.x, glob, config, rng, 1000, 0.3)
    assert len(pts) == 1000
    best = s.objective
    assert all(qp.objective(x) <= best + 1e-9 * max(1.0, abs(best)) for x in pts)


def test_solve_is_deterministic(noisy, model, config, glob):
    a = solve_qp(_qp(noisy.prices, noisy.warm, PenaltyWeights.constant(24), model, config, glob))
    b = solve_qp(_qp(noisy.prices, noisy.warm, PenaltyWeights.constant(24), model, config, glob))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------
def test_idle_weight_columns_are_zero(noisy, model, config, glob):
    qp = _qp(noisy.prices, noisy.warm, PenaltyWeights.constant(24), model, config, glob)
    J = differentiate_qp(solve_qp(qp), qp)
    idle = np.flatnonzero(~qp.active)
    assert idle.size > 0
    assert np.max(np.abs(J[:, idle])) <= 1e-12 and np.max(np.abs(J[:, 24 + idle])) <= 1e-12


def test_differentiate_requires_optimal(noisy, model, config, glob):
    qp = _qp(noisy.prices, noisy.warm, PenaltyWeights.constant(24), model, config, glob)
    s = solve_qp(qp)
    s.status = "max_iter"
    with pytest.raises(SolverError):
        differentiate_qp(s, qp)


def test_jvp_matches_finite_differences(noisy, model, config, glob, rng):
    w = tuple(np.exp(rng.uniform(-1.0, 1.0, 24)) for _ in range(3))
    qp = _qp(noisy.prices, noisy.warm, w, model, config, glob)
    s = solve_qp(qp)
    d = rng.normal(size=(3, 24))
    dw = np.vstack(w) * d
    jvp = qp_jvp(s, qp, dw)
    eps = 1e-4

    def solve_at(sign):
        ww = tuple(np.vstack(w) * (1.0 + sign * eps * d))
        return solve_qp(_qp(noisy.prices, noisy.warm, ww, model, config, glob)).x

    fd = (solve_at(1.0) - solve_at(-1.0)) / (2.0 * eps)
    scale = np.concatenate([np.full(72, 1.0), np.full(24, 1e-4)])   # volumes in m3
    err = np.linalg.norm((jvp - fd) * scale) / np.linalg.norm(fd * scale)
    assert err <= 1e-4
    J = differentiate_qp(s, qp)
    assert np.allclose(J @ dw.reshape(-1), jvp, rtol=1e-7, atol=1e-9 * np.max(np.abs(jvp)))


def test_objective_gradient_envelope(noisy, model, config, glob):
    w = PenaltyWeights.constant(24)
    qp = _qp(noisy.prices, noisy.warm, w, model, config, glob)
    s = solve_qp(qp)
    t = int(np.argmax(np.abs(s.x[:24] - noisy.warm.p)))
    analytic = -(s.x[t] - noisy.warm.p[t]) ** 2
    eps = 1e-4

    def obj(delta):
        wp = w.w_p.copy()
        wp[t] += delta
        return solve_qp(_qp(noisy.prices, noisy.warm, (wp, w.w_q, w.w_h), model, config,
                            glob)).objective

    fd = (obj(eps) - obj(-eps)) / (2 * eps)
    assert analytic != 0.0
    assert fd == pytest.approx(analytic, rel=1e-3)


# ---------------------------------------------------------------------------
# recursive refinement
# ---------------------------------------------------------------------------
def test_single_step_is_one_qp(noisy, model, config, glob):
    w = PenaltyWeights.constant(24)
    x1, tape = recursive_refine(noisy.prices, noisy.warm, w, model, config, glob, K=1)
    s = solve_qp(_qp(noisy.prices, noisy.warm, w, model, config, glob))
    assert len(tape.steps) == 1 and not tape.flagged
    assert np.array_equal(x1.p, np.where(noisy.warm.mode == 0, 0.0, s.x[:24]))


def test_idle_fixed_point(model, config, glob, day_prices):
    x = _warm(np.zeros(24), model, config)
    xk, _ = recursive_refine(day_prices, x, PenaltyWeights.constant(24), model, config, glob)
    assert np.array_equal(xk.p, x.p) and np.array_equal(xk.q, x.q)
    assert np.allclose(xk.h, x.h, rtol=0, atol=1e-8)


def test_converged_point_is_fixed(noisy, model, config, glob):
    # constant weights iterate the QP map to its fixed point
    flat = PenaltyWeights.constant(24, gamma=1.0 + 1e-7)
    x_conv, tape = recursive_refine(noisy.prices, noisy.warm, flat, model, config, glob, K=25)
    last = np.max(np.abs(x_conv.p - tape.steps[-1].point.p))
    again, _ = recursive_refine(noisy.prices, x_conv, PenaltyWeights.constant(24), model,
                                config, glob, K=3)
    assert last <= 1e-4
    assert np.max(np.abs(again.p - x_conv.p)) <= 10.0 * last


def test_infeasible_step_falls_back(model, config, glob, day_prices):
    p = np.zeros(24)
    p[5:8] = 8.0                      # turbine water ends above the terminal target
    x = _warm(p, model, config)
    xk, tape = recursive_refine(day_prices, x, PenaltyWeights.constant(24), model, config, glob)
    assert tape.flagged and tape.infeasible_at == 0
    assert xk is x
    assert np.all(refine_backward(tape, np.ones(96)) == 0.0)


def test_modes_preserved_and_steps_shrink(scenarios, model, config, glob):
    base = baseline_schedules(scenarios, model, config)
    for seed in range(3):
        for smp in make_samples(scenarios, base, "random", model, config, n_variants=1,
                                seed=seed):
            xk, tape = recursive_refine(smp.prices, smp.warm, PenaltyWeights.constant(24),
                                        model, config, glob)
            assert np.array_equal(xk.mode, smp.warm.mode)
            assert np.all(np.sign(xk.p) == np.sign(smp.warm.p))
            pts = [st.point for st in tape.steps] + [xk]
            d = [np.linalg.norm(np.concatenate([a.p - b.p, a.q - b.q, a.h - b.h]))
                 for a, b in zip(pts[1:], pts[:-1])]
            assert all(d2 <= d1 * (1.0 + 1e-9) for d1, d2 in zip(d, d[1:]))


def test_refinement_improves_noisy_warm_starts(scenarios, model, config, glob):
    base = baseline_schedules(scenarios[:4], model, config)
    raw, ref = [], []
    for seed in range(20):
        smp = make_samples(scenarios[:4], base, [0.3], model, config, n_variants=1,
                           seed=seed)[seed % 4]
        xk, _ = recursive_refine(smp.prices, smp.warm, PenaltyWeights.constant(24), model,
                                 config, glob)
        raw.append(evaluate_schedule(smp.warm.p, smp.prices, model, config).profit)
        ref.append(evaluate_schedule(xk.p, smp.prices, model, config).profit)
    assert np.mean(ref) >= np.mean(raw)


def test_refine_backward_matches_finite_differences(noisy, model, config, glob, rng):
    w0 = PenaltyWeights.constant(24)
    c = rng.normal(size=24)

    def loss(w):
        xk, _ = recursive_refine(noisy.prices, noisy.warm, w, model, config, glob)
        return float(c @ xk.p)

    _, tape = recursive_refine(noisy.prices, noisy.warm, w0, model, config, glob)
    g = np.zeros(96)
    g[:24] = c
    grad = refine_backward(tape, g)
    d = rng.normal(size=(3, 24))
    eps = 1e-5
    wp = PenaltyWeights(*(w0.stack() * (1 + eps * d)))
    wm = PenaltyWeights(*(w0.stack() * (1 - eps * d)))
    fd = (loss(wp) - loss(wm)) / (2 * eps)
    assert fd == pytest.approx(float(np.sum(grad * w0.stack() * d)), rel=1e-3)
