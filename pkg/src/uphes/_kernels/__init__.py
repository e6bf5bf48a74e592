"""Hot numerical kernels with a compiled backend and a pure-Python fallback.

The compiled module ``_ckernels`` is used when it imports cleanly.  Setting the
environment variable ``UPHES_KERNELS=python`` forces the fallback, which is
useful for debugging and for the benchmark in ``bench/``.  Both backends
perform the same floating-point operations in the same order.
"""
import importlib
import os

import numpy as np

from . import _pykernels

SCALAR_NAMES = (
    "r_base", "slope_m", "n_pits", "pit_radius", "v_total", "up_fill_max",
    "head_offset", "v_min", "v_max", "dt_s", "dt_h", "c_op", "idle_eps",
    "v_target", "vol_coef", "v_init", "low_cap", "up_cap", "reserved0", "reserved1",
)

FLAG_OK = _pykernels.FLAG_OK
FLAG_CLAMP_LO = _pykernels.FLAG_CLAMP_LO
FLAG_CLAMP_HI = _pykernels.FLAG_CLAMP_HI
FLAG_FORCED_IDLE = _pykernels.FLAG_FORCED_IDLE
FLAG_IDLE = _pykernels.FLAG_IDLE
FLAG_NAMES = {0: "ok", 1: "clamp_lo", 2: "clamp_hi", 3: "forced_idle", 4: "idle"}


def _load_compiled():
    if os.environ.get("UPHES_KERNELS", "").lower() == "python":
        return None
    try:
        return importlib.import_module(__name__ + "._ckernels")
    except ImportError:  # pragma: no cover - depends on build
        return None


_ckernels = _load_compiled()

BACKEND = "cython" if _ckernels is not None else "python"

# reservoir geometry functions of the selected backend
geo = _ckernels if _ckernels is not None else _pykernels


def available_backends():
    """Names of the kernel backends importable in this process."""
    return ("cython", "python") if _ckernels is not None else ("python",)


def pack(config, model):
    """Flatten a plant configuration and UPC model into kernel arrays.

    Returns
    -------
    coef_t, coef_p : ndarray
        Dense ``(d+1, d+1)`` coefficient tables.
    env : ndarray
        ``(4, e+1)`` envelope coefficients, ascending powers of head.
    scal : ndarray
        Scalars ordered as ``SCALAR_NAMES``.
    """
    coef_t = np.ascontiguousarray(model.dense(1), dtype=float)
    coef_p = np.ascontiguousarray(model.dense(2), dtype=float)
    env = np.ascontiguousarray(model.envelope_table(), dtype=float)
    scal = np.array([
        config.r_base, config.slope_m, float(config.n_pits), config.pit_radius,
        config.v_total, config.up_fill_max, config.head_offset, config.v_min,
        config.v_max, config.dt, config.dt / 3600.0, config.c_op, config.idle_eps,
        config.v_target, config.eta_ref * config.rho * config.g / 3.6e9,
        config.v_init, config.low_cap, config.up_cap, 0.0, 0.0,
    ], dtype=float)
    return coef_t, coef_p, env, scal


def make_kernel(config, model, backend=None):
    """Build a kernel object for ``(config, model)`` on the chosen backend."""
    backend = backend or BACKEND
    args = pack(config, model)
    if backend == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available")
        return _ckernels.Kernel(*args)
    if backend == "python":
        return _pykernels.Kernel(*args)
    raise ValueError(f"unknown kernel backend {backend!r}")


_CACHE = {}


def get_kernel(config, model):
    """Cached :func:`make_kernel` on the default backend, keyed by object identity."""
    key = (id(config), id(model))
    hit = _CACHE.get(key)
    if hit is not None and hit[0] is config and hit[1] is model:
        return hit[2]
    if len(_CACHE) > 64:
        _CACHE.clear()
    k = make_kernel(config, model)
    _CACHE[key] = (config, model, k)
    return k
