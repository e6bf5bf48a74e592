"""Compiled versus pure-Python kernel timings.

Runs the simulator forward pass, its pathwise gradient and the DP backward
induction on both backends, checks that results agree bitwise, and prints the
median wall time of each.

    python3 bench/benchmark_kernels.py [--repeat N]
"""
import argparse
import statistics
import time

import numpy as np

from uphes._kernels import available_backends, make_kernel
from uphes.baselines import default_dp_grid
from uphes.data import kmedoids, synthetic_prices
from uphes.plant import PlantConfig, default_model


def _time(fn, repeat):
    out, ts = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return out, statistics.median(ts)


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    config = PlantConfig()
    model = default_model(config)
    prices = kmedoids(synthetic_prices(), 19, 0)[0][0].prices
    rng = np.random.default_rng(0)
    p_hat = rng.uniform(-12.0, 14.0, 24)
    lam_med = float(np.median(prices))
    grid = default_dp_grid(config)

    cases = {
        "sim_forward": lambda k: k.sim_forward(p_hat),
        "profit_grad": lambda k: k.profit_grad(p_hat, prices, lam_med),
        "dp_solve": lambda k: k.dp_solve(prices, lam_med, grid.knots, grid.act_mode,
                                         grid.act_frac),
    }
    backends = available_backends()
    kernels = {b: make_kernel(config, model, b) for b in backends}
    print(f"{'kernel':14s}" + "".join(f"{b:>14s}" for b in backends) + f"{'speedup':>10s}"
          + "  identical")
    for name, fn in cases.items():
        res, secs = {}, {}
        for b in backends:
            res[b], secs[b] = _time(lambda: fn(kernels[b]), args.repeat)
        row = f"{name:14s}" + "".join(f"{secs[b] * 1e3:12.3f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{secs['python'] / secs['cython']:9.1f}x  {_same(res['cython'], res['python'])}"
        print(row)


if __name__ == "__main__":
    main()
