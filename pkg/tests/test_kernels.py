import os
import subprocess
import sys

import numpy as np
import pytest

from uphes._kernels import BACKEND, available_backends, get_kernel, make_kernel
from uphes.baselines import default_dp_grid, make_actions

needs_compiled = pytest.mark.skipif("cython" not in available_backends(),
                                    reason="compiled kernels not built")


def _same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


@pytest.fixture(scope="module")
def pair(model, config):
    return make_kernel(config, model, "cython"), make_kernel(config, model, "python")


@needs_compiled
def test_geometry_parity(pair, config):
    c, p = pair
    for v in np.linspace(config.v_min, config.v_max, 57):
        assert c.head(v) == p.head(v) and c.dhead(v) == p.dhead(v)
        assert c.inv_vlow(v) == p.inv_vlow(v)
    for x in np.linspace(0.0, 25.0, 31):
        assert c.vlow(x) == p.vlow(x) and c.dvlow(x) == p.dvlow(x)
        assert c.vup(x) == p.vup(x) and c.dvup(x) == p.dvup(x)


@needs_compiled
def test_plant_parity(pair, config, rng):
    c, p = pair
    for _ in range(200):
        h = rng.uniform(config.h_min, config.h_max)
        mode = int(rng.integers(1, 3))
        frac = rng.uniform()
        assert c.envelope(mode, h) == p.envelope(mode, h)
        ph = c.action_power(mode, frac, h)
        assert ph == p.action_power(mode, frac, h)
        assert c.upc(mode, ph, h) == p.upc(mode, ph, h)
        v = rng.uniform(config.v_min, config.v_max)
        p_hat = rng.uniform(-15.0, 15.0)
        assert _same(tuple(c.step(v, h, p_hat)), tuple(p.step(v, h, p_hat)))


@needs_compiled
def test_simulation_parity(pair, day_prices, rng):
    c, p = pair
    lam_med = float(np.median(day_prices))
    for _ in range(100):
        p_hat = rng.uniform(-14.0, 16.0, 24) * (rng.uniform(size=24) > 0.3)
        assert _same(tuple(c.sim_forward(p_hat)), tuple(p.sim_forward(p_hat)))
        assert _same(c.profit_grad(p_hat, day_prices, lam_med),
                     p.profit_grad(p_hat, day_prices, lam_med))


@needs_compiled
def test_dp_and_enumeration_parity(pair, config, day_prices):
    c, p = pair
    grid = default_dp_grid(config, 21, 5)
    lam_med = float(np.median(day_prices))
    args = (day_prices, lam_med, grid.knots, grid.act_mode, grid.act_frac)
    Vc, _ = c.dp_solve(*args)
    Vp, _ = p.dp_solve(*args)
    assert _same(Vc, Vp)
    rc = c.dp_rollout(day_prices, grid.knots, Vc, grid.act_mode, grid.act_frac)
    rp = p.dp_rollout(day_prices, grid.knots, Vp, grid.act_mode, grid.act_frac)
    assert _same(tuple(rc), tuple(rp))
    am, af = make_actions(3)
    short = day_prices[15:19]
    lm = float(np.median(short))
    ec = c.enumerate_best(short, lm, am, af)
    ep = p.enumerate_best(short, lm, am, af)
    assert list(ec[0]) == list(ep[0]) and ec[1] == ep[1] and ec[2] == ep[2]


def test_python_fallback_is_selectable():
    env = dict(os.environ, UPHES_KERNELS="python")
    code = ("import uphes._kernels as k; from uphes.plant import PlantConfig, default_model; "
            "from uphes.simulator import profit; import numpy as np; c = PlantConfig(); "
            "m = default_model(c); p = np.zeros(24); p[3] = -8.0; p[20] = 9.0; "
            "print(k.BACKEND, repr(profit(p, np.linspace(20, 120, 24), m, c)))")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    backend, value = res.stdout.split()
    assert backend == "python"
    from uphes.plant import PlantConfig, default_model
    from uphes.simulator import profit
    c = PlantConfig()
    p = np.zeros(24)
    p[3], p[20] = -8.0, 9.0
    assert float(value) == profit(p, np.linspace(20, 120, 24), default_model(c), c)


def test_backend_selection(model, config):
    assert BACKEND in available_backends()
    with pytest.raises(ValueError):
        make_kernel(config, model, "fortran")
    k = get_kernel(config, model)
    assert get_kernel(config, model) is k
