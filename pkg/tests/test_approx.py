import numpy as np
import pytest

from uphes.approx import (GlobalLinearModel, build_sos2_grid, error_metrics, fit_global,
                          local_linearize, points_from_trajectories, sos2_interpolate,
                          sos2_volume, sos2_weights, approx_error_report, write_error_report)
from uphes.errors import DomainError, FitError
from uphes.plant import Mode, Trajectory, UpcModel, gross_head, upc_eval, upc_grad, volume_from_head
from uphes.training import error_points

ENV = {Mode.TURBINE: ([2.0], [14.0]), Mode.PUMP: ([-12.0], [-2.0])}


@pytest.fixture(scope="module")
def points(scenarios, model, config):
    return error_points(scenarios, model, config)


# ---------------------------------------------------------------------------
# global affine model
# ---------------------------------------------------------------------------
def test_fit_global_recovers_affine_upc(config):
    terms = {(1, 0): 2.0, (0, 1): 3.0, (0, 0): 1.0}
    m = UpcModel.from_terms(1, {Mode.TURBINE: terms, Mode.PUMP: terms}, envelope=ENV)
    g = fit_global(m, config)
    for md in (Mode.TURBINE, Mode.PUMP):
        assert np.allclose(g.alpha[md], [2.0, 3.0, 1.0], rtol=0, atol=1e-10)
        assert np.allclose(g.beta_min[md], [0.0, ENV[md][0][0]], atol=1e-10)
        assert np.allclose(g.beta_max[md], [0.0, ENV[md][1][0]], atol=1e-10)


def test_fit_global_underdetermined(model, config):
    with pytest.raises(FitError):
        fit_global(model, config, n_h=1)
    with pytest.raises(FitError):
        fit_global(model, config, n_v=2)


def test_global_bound_invariant(glob, config):
    hs = np.linspace(config.h_min, config.h_max, 50)
    lo, hi = glob.power_bounds(Mode.TURBINE, hs)
    assert np.all(hi >= lo)
    lo, hi = glob.power_bounds(Mode.PUMP, hs)
    assert np.all(lo <= hi)


def test_global_head_map_round_trip(glob, config):
    v = np.linspace(config.v_min, config.v_max, 7)
    assert np.allclose(glob.volume(glob.head(v)), v, rtol=1e-12)
    assert isinstance(glob, GlobalLinearModel)
    assert glob.delta[0] < 0.0          # head falls as the lower reservoir fills


# ---------------------------------------------------------------------------
# piecewise-bilinear grid
# ---------------------------------------------------------------------------
def test_grid_invariants(model, config):
    grid = build_sos2_grid(model, config, 8, 6)
    assert np.all(np.diff(grid.h) > 0.0)
    for m in (Mode.TURBINE, Mode.PUMP):
        assert np.all(np.diff(grid.p[m], axis=1) > 0.0)
        H = np.repeat(grid.h[:, None], grid.n_p(m), axis=1)
        assert np.array_equal(grid.q[m], upc_eval(model, m, grid.p[m], H))
    for h, v in zip(grid.h, grid.v):
        assert gross_head(v, config) == pytest.approx(h, abs=1e-9)


def test_grid_weight_count(model, config):
    grid = build_sos2_grid(model, config, 8, {Mode.TURBINE: 6, Mode.PUMP: 6})
    assert grid.weight_count() == 24 * (48 + 48) == 2304


def test_grid_precondition(model, config):
    with pytest.raises(ValueError):
        build_sos2_grid(model, config, 1, 4)
    with pytest.raises(ValueError):
        build_sos2_grid(model, config, 4, {Mode.TURBINE: 1, Mode.PUMP: 4})


def test_interpolation_exact_at_vertices(model, config):
    grid = build_sos2_grid(model, config, 5, 4)
    for m in (Mode.TURBINE, Mode.PUMP):
        for i in range(grid.n_h):
            for j in range(grid.n_p(m)):
                q = sos2_interpolate(grid, grid.h[i], grid.p[m][i, j], m)
                assert q == grid.q[m][i, j]
        assert sos2_volume(grid, grid.h[2]) == grid.v[2]


def test_single_patch_matches_hand_bilinear(model, config):
    grid = build_sos2_grid(model, config, 2, 2)
    m = Mode.TURBINE
    P_, Q_ = grid.p[m], grid.q[m]
    h = 0.5 * (grid.h[0] + grid.h[1])
    p = 0.25 * P_.sum()
    # cell centre: the four corner flows weigh 1/4 each
    assert sos2_interpolate(grid, h, p, m) == pytest.approx(0.25 * Q_.sum(), rel=1e-13)
    # an off-centre point through the explicit bilinear formula
    th, ph = 0.3, 0.7
    hq = grid.h[0] + th * (grid.h[1] - grid.h[0])
    lo = (1 - th) * P_[0, 0] + th * P_[1, 0]
    hi = (1 - th) * P_[0, 1] + th * P_[1, 1]
    hand = ((1 - th) * ((1 - ph) * Q_[0, 0] + ph * Q_[0, 1])
            + th * ((1 - ph) * Q_[1, 0] + ph * Q_[1, 1]))
    assert sos2_interpolate(grid, hq, lo + ph * (hi - lo), m) == pytest.approx(hand, rel=1e-13)


def test_weights_have_two_adjacent_supports(model, config, rng):
    grid = build_sos2_grid(model, config, 6, 5)
    for _ in range(50):
        h = rng.uniform(config.h_min, config.h_max)
        lo, hi = model.power_bounds(Mode.PUMP, h)
        i, th, j, ph = sos2_weights(grid, h, rng.uniform(lo, hi), Mode.PUMP)
        assert 0 <= i <= grid.n_h - 2 and 0 <= j <= grid.n_p(Mode.PUMP) - 2
        assert 0.0 <= th <= 1.0


def test_interpolation_outside_hull(model, config):
    grid = build_sos2_grid(model, config, 4, 4)
    with pytest.raises(DomainError):
        sos2_interpolate(grid, config.h_max + 1.0, 5.0, Mode.TURBINE)
    lo, hi = model.power_bounds(Mode.TURBINE, 70.0)
    with pytest.raises(DomainError):
        sos2_interpolate(grid, 70.0, hi + 0.5 * (hi - lo), Mode.TURBINE)
    with pytest.raises(DomainError):
        sos2_volume(grid, config.h_min - 1.0)


def test_true_envelope_points_stay_representable(model, config, rng):
    # the chord envelope between knots misses the curved one by far less than the slack
    grid = build_sos2_grid(model, config, 4, 4)
    for h in rng.uniform(config.h_min, config.h_max, 40):
        for m in (Mode.TURBINE, Mode.PUMP):
            for p in model.power_bounds(m, h):
                assert np.isfinite(sos2_interpolate(grid, h, float(p), m))


# ---------------------------------------------------------------------------
# local linearization
# ---------------------------------------------------------------------------
def test_local_linearize_monomial(config):
    m = UpcModel.from_terms(2, {Mode.TURBINE: {(1, 1): 1.0}, Mode.PUMP: {(1, 1): 1.0}},
                            envelope=ENV, h_range=(0.0, 100.0))
    h0 = gross_head(config.v_init, config)
    tr = Trajectory([2.0, 0.0], [2.0 * h0, 0.0], [h0, h0], [config.v_init] * 2, [1, 0])
    lin = local_linearize(m, config, tr)
    assert np.allclose(lin.xi_q[0], [h0, 2.0, -2.0 * h0], rtol=1e-15)
    assert np.array_equal(lin.xi_q[1], np.zeros(3))
    assert list(lin.active) == [True, False]


def test_taylor_coefficients_of_product():
    # the head of 3 m lies outside the plant, so only the flow expansion is formed
    m = UpcModel.from_terms(2, {Mode.TURBINE: {(1, 1): 1.0}}, h_range=(0.0, 100.0))
    p, h = 2.0, 3.0
    qp, qh = upc_grad(m, Mode.TURBINE, p, h)
    xi = np.array([qp, qh, upc_eval(m, Mode.TURBINE, p, h) - qp * p - qh * h])
    assert np.array_equal(xi, [3.0, 2.0, -6.0])


def test_taylor_exactness(model, config, scenarios):
    from uphes.training import baseline_schedules
    tr = baseline_schedules(scenarios[:2], model, config)[1]
    lin = local_linearize(model, config, tr)
    for t in range(tr.T):
        if tr.mode[t] == 0:
            assert np.array_equal(lin.xi_q[t], np.zeros(3))
            continue
        q = upc_eval(model, tr.mode[t], tr.p[t], tr.h[t])
        assert abs(lin.xi_q[t] @ [tr.p[t], tr.h[t], 1.0] - q) <= 1e-9 * max(1.0, abs(q))
        assert np.allclose(lin.xi_q[t][:2], upc_grad(model, tr.mode[t], tr.p[t], tr.h[t]),
                           rtol=1e-12)
        v = volume_from_head(tr.h[t], config)
        assert abs(lin.xi_v[t] @ [tr.h[t], 1.0] - v) <= 1e-9 * v


def test_local_linearize_rejects_bad_modes(model, config):
    tr = Trajectory([5.0], [5.0], [79.0], [config.v_init], [1])
    object.__setattr__(tr, "mode", np.array([2]))
    with pytest.raises(ValueError):
        local_linearize(model, config, tr)


# ---------------------------------------------------------------------------
# error reports
# ---------------------------------------------------------------------------
def test_error_metrics_self_comparison():
    y = np.array([1.0, 2.0, 4.0])
    met = error_metrics(y, y)
    assert met == {"mean_pct": 0.0, "max_pct": 0.0, "mape_pct": 0.0, "r2": 1.0}
    with pytest.raises(ValueError):
        error_metrics([1.0], [1.0])


def test_error_metrics_hand_values():
    met = error_metrics([1.0, 2.0], [1.1, 1.8])
    assert met["mape_pct"] == pytest.approx(100.0 * (0.1 + 0.1) / 2, rel=1e-12)
    assert met["max_pct"] == pytest.approx(10.0, rel=1e-12)
    assert met["mean_pct"] == pytest.approx(100.0 * 0.15 / 1.5, rel=1e-12)
    assert met["r2"] == pytest.approx(1.0 - 0.05 / 0.5, rel=1e-12)


def test_report_truth_is_exact(model, config, points):
    rep = approx_error_report(model, config, "truth", points)
    for fn in ("f_upc", "f_vol"):
        assert rep[fn]["mape_pct"] == 0.0 and rep[fn]["r2"] == 1.0


def test_report_needs_points(model, config, points):
    from uphes.approx import EvalPoints
    one = EvalPoints(points.mode[:1], points.p[:1], points.h[:1], points.v[:1])
    with pytest.raises(ValueError):
        approx_error_report(model, config, "truth", one)


def test_error_points_are_consistent(points, config):
    assert len(points) == 480
    assert set(np.unique(points.mode)) <= {1, 2}
    for v, h in zip(points.v[:40], points.h[:40]):
        assert gross_head(v, config) == pytest.approx(h, abs=1e-9)


def test_piecewise_mape_decreases_with_resolution(model, config, points):
    mape = [approx_error_report(model, config, build_sos2_grid(model, config, n, n),
                                points)["f_upc"]["mape_pct"] for n in (4, 8, 16, 32)]
    assert all(b <= a for a, b in zip(mape, mape[1:]))


def test_report_ordering(model, config, glob, points):
    g = approx_error_report(model, config, glob, points)
    pw = approx_error_report(model, config, build_sos2_grid(model, config, 20, 20), points)
    for fn in ("f_upc", "f_vol"):
        assert pw[fn]["mape_pct"] < g[fn]["mape_pct"]
        assert pw[fn]["r2"] > g[fn]["r2"]


def test_points_from_trajectories_limit(scenarios, model, config):
    from uphes.training import baseline_schedules
    trs = baseline_schedules(scenarios[:3], model, config)
    pts = points_from_trajectories(trs, config, limit=5)
    assert len(pts) == 5


def test_write_error_report(tmp_path):
    met = {"mean_pct": 1.0, "max_pct": 2.0, "mape_pct": 1.5, "r2": 0.9}
    write_error_report([("f_upc", "global", met)], tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "function,method,mean_pct,max_pct,mape_pct,r2"
    assert lines[1] == "f_upc,global,1,2,1.5,0.9"
