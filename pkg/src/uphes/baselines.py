"""Mixed-integer baselines and exact desk-scale oracles.

Two mixed-integer quadratic models of the scheduling problem are built here:
a global-linear one with big-M mode linking (``GL``) and a piecewise-bilinear
one on SOS2 interpolation weights (``PW``).  Both export to free-format MPS for
any external solver.  Small instances can also be solved by a plain
enumeration of binary and SOS2-segment choices with a convex QP per leaf.

The oracles work on the true nonlinear plant: backward induction over a
volume grid and brute force over action sequences for short horizons.
"""
from __future__ import annotations

import importlib.util
import math
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ._kernels import get_kernel
from .approx import ACTIVE, GlobalLinearModel, Sos2Grid
from .errors import BuildError, SearchSpaceError, SolverError
from .plant import Mode, PlantConfig, UpcModel, modes_from_power
from .qp import QpTolerances, solve_dense

KINDS = ("C", "B", "S")
SENSES = ("E", "L", "G")
SOLVER_ENV = "UPHES_SOLVER"


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------
@dataclass
class MipModel:
    """Mixed-integer model with a diagonal quadratic objective, maximized.

    The objective is ``obj @ x + 0.5 * sum(quad * x**2) + const``.  Rows are
    ``(name, sense, idx, coef, rhs)`` with ``sense`` one of ``E``, ``L``, ``G``.
    SOS2 groups are ``(name, idx)`` with members in their adjacency order.
    """

    name: str = "uphes"
    names: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    quad: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    sos2: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    const: float = 0.0
    _index: dict = field(default_factory=dict, repr=False)

    # building ---------------------------------------------------------
    def add_var(self, name: str, kind: str = "C", lb: float = 0.0, ub: float = math.inf,
                obj: float = 0.0, quad: float = 0.0) -> int:
        if kind not in KINDS:
            raise BuildError(f"unknown variable kind {kind!r}")
        if name in self._index:
            raise BuildError(f"duplicate variable {name!r}")
        if lb > ub:
            raise BuildError(f"variable {name!r} has empty bounds [{lb}, {ub}]")
        if kind in ("B", "S") and (lb < 0.0 or ub > 1.0):
            raise BuildError(f"variable {name!r} of kind {kind} must lie in [0, 1]")
        self._index[name] = len(self.names)
        self.names.append(name)
        self.kinds.append(kind)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        self.quad.append(float(quad))
        return self._index[name]

    def add_row(self, name: str, sense: str, terms: dict, rhs: float) -> None:
        if sense not in SENSES:
            raise BuildError(f"unknown row sense {sense!r}")
        items = {}
        for k, a in terms.items():
            j = self.var(k) if isinstance(k, str) else int(k)
            items[j] = items.get(j, 0.0) + float(a)
        idx = tuple(j for j in sorted(items) if items[j] != 0.0)
        self.rows.append((name, sense, idx, tuple(items[j] for j in idx), float(rhs)))

    def add_sos2(self, name: str, members) -> None:
        idx = tuple(self.var(k) if isinstance(k, str) else int(k) for k in members)
        if len(idx) < 2:
            raise BuildError(f"SOS2 group {name!r} needs at least two members")
        self.sos2.append((name, idx))

    def var(self, name: str) -> int:
        if not self._index and self.names:
            self._index = {k: i for i, k in enumerate(self.names)}
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no variable named {name!r}") from None

    def fix(self, name: str, value: float) -> None:
        j = self.var(name)
        self.lb[j] = self.ub[j] = float(value)

    # inspection -------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.names)

    def count(self, kind: str) -> int:
        return sum(1 for k in self.kinds if k == kind)

    def objective_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.obj, x) + 0.5 * np.dot(self.quad, x * x) + self.const)

    def violation(self, x) -> float:
        """Largest bound, row, integrality or SOS2 violation at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = max(float(np.max(np.asarray(self.lb) - x, initial=0.0)),
                    float(np.max(x - np.asarray(self.ub), initial=0.0)))
        for _, sense, idx, coef, rhs in self.rows:
            act = float(np.dot(coef, x[list(idx)])) if idx else 0.0
            r = act - rhs
            worst = max(worst, abs(r) if sense == "E" else (r if sense == "L" else -r))
        for j, k in enumerate(self.kinds):
            if k == "B":
                worst = max(worst, abs(x[j] - round(x[j])))
        for _, idx in self.sos2:
            nz = [k for k, j in enumerate(idx) if abs(x[j]) > 1e-9]
            if nz and nz[-1] - nz[0] > 1:
                worst = max(worst, 1.0)
        return worst

    def as_dict(self, x) -> dict:
        return {k: float(v) for k, v in zip(self.names, x)}

    def structure(self) -> tuple:
        """Hashable field-by-field description used for round-trip checks."""
        return (tuple(self.names), tuple(self.kinds), tuple(self.lb), tuple(self.ub),
                tuple(self.obj), tuple(self.quad), tuple(self.rows), tuple(self.sos2),
                tuple(sorted((k, str(v)) for k, v in self.meta.items())), self.const)


# ---------------------------------------------------------------------------
# global-linear formulation
# ---------------------------------------------------------------------------
def _tag(t: int) -> str:
    return f"{t:02d}"


_MODE_TAG = {Mode.TURBINE: "T", Mode.PUMP: "P"}


def gl_required_bigm(glob: GlobalLinearModel, config: PlantConfig) -> float:
    """Smallest constant that relaxes every big-M row when its mode is off."""
    hs = np.array([config.h_min, config.h_max])
    need = 0.0
    for m in ACTIVE:
        lo, hi = glob.power_bounds(m, hs)
        a = glob.alpha[m]
        need = max(need, float(np.max(lo)), float(np.max(-hi)),
                   float(np.max(np.abs(a[1] * hs + a[2]))))
    return need


def _gl_ranges(glob: GlobalLinearModel, config: PlantConfig):
    """Power range and flow magnitude cap per active mode."""
    hs = np.array([config.h_min, config.h_max])
    out = {}
    for m in ACTIVE:
        lo, hi = glob.power_bounds(m, hs)
        p_lo, p_hi = min(0.0, float(np.min(lo))), max(0.0, float(np.max(hi)))
        a = glob.alpha[m]
        corners = [a[0] * p + a[1] * h + a[2] for p in (p_lo, p_hi) for h in hs]
        out[m] = (p_lo, p_hi, float(np.max(np.abs(corners))))
    return out


def build_miqp_gl(prices, glob: GlobalLinearModel, config: PlantConfig,
                  bigM: float | None = None) -> MipModel:
    """Global-linear MIQP with one binary per mode and hour.

    Per hour ``t`` the variables are ``zI, zT, zP`` (binary), ``pT >= 0``,
    ``pP <= 0``, ``qT, qP``, the start-of-hour head ``h`` and the end-of-hour
    volume ``v``.  Power bounds and flows are linked to the binaries with
    big-M rows.  ``bigM`` defaults to :func:`gl_required_bigm`.
    """
    lam = np.asarray(prices, dtype=float)
    if lam.ndim != 1 or lam.size == 0 or not np.all(np.isfinite(lam)):
        raise BuildError("prices must be a non-empty finite 1-D array")
    need = gl_required_bigm(glob, config)
    M = need if bigM is None else float(bigM)
    if M < need:
        raise BuildError(f"bigM {M} is smaller than the required span {need}")
    T = lam.size
    dt_h, C = config.dt_hours, config.c_op
    rng = _gl_ranges(glob, config)
    m = MipModel(name="uphes_gl")
    m.meta.update(formulation="GL", horizon=T, bigM=repr(M))
    for t in range(T):
        s = _tag(t)
        for k in ("I", "T", "P"):
            m.add_var(f"z{k}_{s}", "B", 0.0, 1.0)
        for md in ACTIVE:
            k = _MODE_TAG[md]
            p_lo, p_hi, qcap = rng[md]
            m.add_var(f"p{k}_{s}", "C", p_lo, p_hi, obj=dt_h * lam[t], quad=-2.0 * dt_h * C)
            m.add_var(f"q{k}_{s}", "C", -qcap, qcap)
        m.add_var(f"h_{s}", "C", config.h_min, config.h_max)
        m.add_var(f"v_{s}", "C", config.v_min, config.v_max)
    d0, d1 = float(glob.delta[0]), float(glob.delta[1])
    for t in range(T):
        s = _tag(t)
        m.add_row(f"mode_{s}", "E", {f"zI_{s}": 1.0, f"zT_{s}": 1.0, f"zP_{s}": 1.0}, 1.0)
        for md in ACTIVE:
            k = _MODE_TAG[md]
            z, p, q, h = f"z{k}_{s}", f"p{k}_{s}", f"q{k}_{s}", f"h_{s}"
            p_lo, p_hi, qcap = rng[md]
            bmin, bmax = glob.beta_min[md], glob.beta_max[md]
            # beta_min . [h, 1] <= p <= beta_max . [h, 1] when on
            m.add_row(f"pmin{k}_{s}", "G", {p: 1.0, h: -bmin[0], z: -M}, bmin[1] - M)
            m.add_row(f"pmax{k}_{s}", "L", {p: 1.0, h: -bmax[0], z: M}, bmax[1] + M)
            # p is zero when off
            if p_hi > 0.0:
                m.add_row(f"pon{k}_{s}", "L", {p: 1.0, z: -p_hi}, 0.0)
            if p_lo < 0.0:
                m.add_row(f"pon{k}_{s}", "G", {p: 1.0, z: -p_lo}, 0.0)
            a = glob.alpha[md]
            m.add_row(f"qlo{k}_{s}", "G", {q: 1.0, p: -a[0], h: -a[1], z: -M}, a[2] - M)
            m.add_row(f"qhi{k}_{s}", "L", {q: 1.0, p: -a[0], h: -a[1], z: M}, a[2] + M)
            m.add_row(f"qon{k}_{s}", "L", {q: 1.0, z: -qcap}, 0.0)
            m.add_row(f"qoff{k}_{s}", "G", {q: 1.0, z: qcap}, 0.0)
        dyn = {f"v_{s}": 1.0, f"qT_{s}": -config.dt, f"qP_{s}": -config.dt}
        if t == 0:
            m.add_row(f"dyn_{s}", "E", dyn, config.v_init)
            m.add_row(f"head_{s}", "E", {f"h_{s}": 1.0}, d0 * config.v_init + d1)
        else:
            dyn[f"v_{_tag(t - 1)}"] = -1.0
            m.add_row(f"dyn_{s}", "E", dyn, 0.0)
            m.add_row(f"head_{s}", "E", {f"h_{s}": 1.0, f"v_{_tag(t - 1)}": -d0}, d1)
    m.add_row("terminal", "L", {f"v_{_tag(T - 1)}": 1.0}, min(config.v_target, config.v_max))
    return m


def gl_assignment(m: MipModel, p, glob: GlobalLinearModel, config: PlantConfig,
                  eps: float | None = None) -> np.ndarray:
    """Full variable vector of the GL model for a power schedule.

    Modes follow the sign of ``p``; flows, heads and volumes follow the affine
    maps, so the result is feasible whenever the schedule is.
    """
    p = np.asarray(p, dtype=float)
    eps = config.idle_eps if eps is None else eps
    modes = modes_from_power(p, eps)
    x = np.zeros(m.n)
    v = config.v_init
    for t in range(p.size):
        s = _tag(t)
        h = float(glob.head(v))
        md = Mode(int(modes[t]))
        x[m.var(f"z{'ITP'[int(md)]}_{s}")] = 1.0
        q = 0.0
        if md != Mode.IDLE:
            k = _MODE_TAG[md]
            q = float(glob.flow(md, p[t], h))
            x[m.var(f"p{k}_{s}")] = p[t]
            x[m.var(f"q{k}_{s}")] = q
        x[m.var(f"h_{s}")] = h
        v = v + config.dt * q
        x[m.var(f"v_{s}")] = v
    return x


# ---------------------------------------------------------------------------
# piecewise-bilinear formulation
# ---------------------------------------------------------------------------
def build_miqp_pw(prices, grid: Sos2Grid, config: PlantConfig) -> MipModel:
    """Piecewise-bilinear MIQP on SOS2 interpolation weights.

    Per hour, head-knot weights ``wh_t_i`` (one SOS2 group) select the head
    and the start-of-hour volume.  Per mode and head knot, power-knot weights
    ``wT_t_i_j`` / ``wP_t_i_j`` (one SOS2 group each) sum to the product of the
    mode binary and the head weight, linearized exactly by product rows on
    auxiliary ``u`` variables.  Power and flow are read off the stored tables.
    """
    lam = np.asarray(prices, dtype=float)
    if lam.ndim != 1 or lam.size == 0 or not np.all(np.isfinite(lam)):
        raise BuildError("prices must be a non-empty finite 1-D array")
    if grid.n_h < 2 or any(grid.n_p(md) < 2 for md in grid.p):
        raise BuildError("grid needs at least 2 knots per axis")
    T = lam.size
    dt_h, C = config.dt_hours, config.c_op
    modes = [md for md in ACTIVE if md in grid.p]
    m = MipModel(name="uphes_pw")
    m.meta.update(formulation="PW", horizon=T, n_h=grid.n_h,
                  **{f"n_p_{_MODE_TAG[md]}": grid.n_p(md) for md in modes})
    p_all = np.concatenate([grid.p[md].ravel() for md in modes])
    q_all = np.concatenate([grid.q[md].ravel() for md in modes])
    p_lo, p_hi = min(0.0, float(p_all.min())), max(0.0, float(p_all.max()))
    q_lo, q_hi = min(0.0, float(q_all.min())), max(0.0, float(q_all.max()))
    for t in range(T):
        s = _tag(t)
        for k in ("I", "T", "P"):
            m.add_var(f"z{k}_{s}", "B", 0.0, 1.0)
        for i in range(grid.n_h):
            m.add_var(f"wh_{s}_{i:02d}", "S", 0.0, 1.0)
        for md in modes:
            k = _MODE_TAG[md]
            for i in range(grid.n_h):
                m.add_var(f"u{k}_{s}_{i:02d}", "C", 0.0, 1.0)
                for j in range(grid.n_p(md)):
                    m.add_var(f"w{k}_{s}_{i:02d}_{j:02d}", "S", 0.0, 1.0)
        m.add_var(f"p_{s}", "C", p_lo, p_hi, obj=dt_h * lam[t], quad=-2.0 * dt_h * C)
        m.add_var(f"q_{s}", "C", q_lo, q_hi)
        m.add_var(f"h_{s}", "C", config.h_min, config.h_max)
        m.add_var(f"v_{s}", "C", config.v_min, config.v_max)
    for t in range(T):
        s = _tag(t)
        m.add_row(f"mode_{s}", "E", {f"zI_{s}": 1.0, f"zT_{s}": 1.0, f"zP_{s}": 1.0}, 1.0)
        wh = [f"wh_{s}_{i:02d}" for i in range(grid.n_h)]
        m.add_sos2(f"sh_{s}", wh)
        m.add_row(f"convex_{s}", "E", {w: 1.0 for w in wh}, 1.0)
        hrow = {w: -float(grid.h[i]) for i, w in enumerate(wh)}
        hrow[f"h_{s}"] = 1.0
        m.add_row(f"hrec_{s}", "E", hrow, 0.0)
        vrow = {w: float(grid.v[i]) for i, w in enumerate(wh)}
        if t == 0:
            m.add_row(f"vrec_{s}", "E", vrow, config.v_init)
        else:
            vrow[f"v_{_tag(t - 1)}"] = -1.0
            m.add_row(f"vrec_{s}", "E", vrow, 0.0)
        prow, qrow = {f"p_{s}": 1.0}, {f"q_{s}": 1.0}
        for md in modes:
            k = _MODE_TAG[md]
            z = f"z{k}_{s}"
            for i in range(grid.n_h):
                u = f"u{k}_{s}_{i:02d}"
                ws = [f"w{k}_{s}_{i:02d}_{j:02d}" for j in range(grid.n_p(md))]
                m.add_sos2(f"s{k}_{s}_{i:02d}", ws)
                # u = z * wh_i, exact for binary z and wh_i in [0, 1]
                m.add_row(f"uz{k}_{s}_{i:02d}", "L", {u: 1.0, z: -1.0}, 0.0)
                m.add_row(f"uw{k}_{s}_{i:02d}", "L", {u: 1.0, wh[i]: -1.0}, 0.0)
                m.add_row(f"ul{k}_{s}_{i:02d}", "G", {u: 1.0, wh[i]: -1.0, z: -1.0}, -1.0)
                row = {w: 1.0 for w in ws}
                row[u] = -1.0
                m.add_row(f"sum{k}_{s}_{i:02d}", "E", row, 0.0)
                for j, w in enumerate(ws):
                    prow[w] = -float(grid.p[md][i, j])
                    qrow[w] = -float(grid.q[md][i, j])
        m.add_row(f"prec_{s}", "E", prow, 0.0)
        m.add_row(f"qrec_{s}", "E", qrow, 0.0)
        dyn = {f"v_{s}": 1.0, f"q_{s}": -config.dt}
        if t == 0:
            m.add_row(f"dyn_{s}", "E", dyn, config.v_init)
        else:
            dyn[f"v_{_tag(t - 1)}"] = -1.0
            m.add_row(f"dyn_{s}", "E", dyn, 0.0)
    m.add_row("terminal", "L", {f"v_{_tag(T - 1)}": 1.0}, min(config.v_target, config.v_max))
    return m


def _pw_locate(knots, x):
    """Segment and weight of ``x`` on a monotone knot vector (either direction)."""
    k = np.asarray(knots, dtype=float)
    if k[0] > k[-1]:
        i, th = _pw_locate(k[::-1], x)
        n = len(k)
        return n - 2 - i, 1.0 - th
    if not k[0] - 1e-9 * abs(k[0]) <= x <= k[-1] + 1e-9 * abs(k[-1]):
        raise ValueError(f"{x} outside knots [{k[0]}, {k[-1]}]")
    i = int(np.clip(np.searchsorted(k, x, side="right") - 1, 0, len(k) - 2))
    th = float(np.clip((x - k[i]) / (k[i + 1] - k[i]), 0.0, 1.0))
    return i, th


def pw_assignment(m: MipModel, modes, sigma, grid: Sos2Grid, config: PlantConfig) -> np.ndarray:
    """Variable vector of the PW model for given modes and normalized powers.

    ``sigma[t]`` in ``[0, 1]`` places the power inside the interpolated
    envelope at the grid head of hour ``t``; heads and volumes follow the
    piecewise-linear grid maps.
    """
    x = np.zeros(m.n)
    v = config.v_init
    for t, md in enumerate(modes):
        s = _tag(t)
        md = Mode(int(md))
        i, th = _pw_locate(grid.v, v)
        wh = np.zeros(grid.n_h)
        wh[i], wh[i + 1] = 1.0 - th, th
        h = float(np.dot(wh, grid.h))
        for ii in range(grid.n_h):
            x[m.var(f"wh_{s}_{ii:02d}")] = wh[ii]
        x[m.var(f"z{'ITP'[int(md)]}_{s}")] = 1.0
        p = q = 0.0
        if md != Mode.IDLE:
            k = _MODE_TAG[md]
            n_p = grid.n_p(md)
            j, ph = _pw_locate(np.linspace(0.0, 1.0, n_p), float(sigma[t]))
            for ii in (i, i + 1):
                x[m.var(f"u{k}_{s}_{ii:02d}")] = wh[ii]
                x[m.var(f"w{k}_{s}_{ii:02d}_{j:02d}")] = wh[ii] * (1.0 - ph)
                x[m.var(f"w{k}_{s}_{ii:02d}_{j + 1:02d}")] = wh[ii] * ph
            P, Q = grid.p[md], grid.q[md]
            for ii in (i, i + 1):
                for jj in (j, j + 1):
                    w = x[m.var(f"w{k}_{s}_{ii:02d}_{jj:02d}")]
                    p += w * P[ii, jj]
                    q += w * Q[ii, jj]
        x[m.var(f"p_{s}")] = p
        x[m.var(f"q_{s}")] = q
        x[m.var(f"h_{s}")] = h
        v = v + config.dt * q
        x[m.var(f"v_{s}")] = v
    return x


# ---------------------------------------------------------------------------
# MPS export and import
# ---------------------------------------------------------------------------
def _num(x: float) -> str:
    if math.isinf(x):
        return "1e+30" if x > 0 else "-1e+30"
    return repr(float(x))


def mps_text(m: MipModel) -> str:
    """Free-format MPS text with ``SOS`` and ``QMATRIX`` sections."""
    out = [f"NAME {m.name}"]
    for k in sorted(m.meta):
        out.append(f"* meta {k} {m.meta[k]}")
    if m.const != 0.0:
        out.append(f"* meta __const {_num(m.const)}")
    out += ["OBJSENSE", "    MAX", "ROWS", " N obj"]
    for name, sense, *_ in m.rows:
        out.append(f" {sense} {name}")
    cols = [[] for _ in range(m.n)]
    for j, c in enumerate(m.obj):
        if c != 0.0:
            cols[j].append(("obj", c))
    for name, _, idx, coef, _ in m.rows:
        for j, a in zip(idx, coef):
            cols[j].append((name, a))
    out.append("COLUMNS")
    for j, name in enumerate(m.names):
        if not cols[j]:
            out.append(f"    {name} obj 0.0")
        for r, a in cols[j]:
            out.append(f"    {name} {r} {_num(a)}")
    out.append("RHS")
    for name, _, _, _, rhs in m.rows:
        if rhs != 0.0:
            out.append(f"    RHS {name} {_num(rhs)}")
    out.append("BOUNDS")
    for j, name in enumerate(m.names):
        lo, hi, kind = m.lb[j], m.ub[j], m.kinds[j]
        if kind == "B" and lo == 0.0 and hi == 1.0:
            out.append(f" BV BND {name}")
        elif lo == hi:
            out.append(f" FX BND {name} {_num(lo)}")
        elif math.isinf(lo) and math.isinf(hi):
            out.append(f" FR BND {name}")
        else:
            out.append(f" MI BND {name}" if math.isinf(lo) else f" LO BND {name} {_num(lo)}")
            out.append(f" PL BND {name}" if math.isinf(hi) else f" UP BND {name} {_num(hi)}")
        if kind == "B" and not (lo == 0.0 and hi == 1.0):
            # fixed binaries keep their kind through a comment the reader understands
            out.append(f"* binary {name}")
    if m.sos2:
        out.append("SOS")
        for name, idx in m.sos2:
            out.append(f" S2 SOS {name} 1")
            for r, j in enumerate(idx, start=1):
                out.append(f"    {m.names[j]} {r}")
    if any(q != 0.0 for q in m.quad):
        out.append("QMATRIX")
        for j, q in enumerate(m.quad):
            if q != 0.0:
                out.append(f"    {m.names[j]} {m.names[j]} {_num(q)}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def export_model(m: MipModel, path) -> None:
    """Write ``m`` as free-format MPS; byte-identical for identical models."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(mps_text(m))


def _meta_value(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def read_mps(path) -> MipModel:
    """Parse the dialect written by :func:`export_model`."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    m = MipModel()
    rows_sense, rows_order = {}, []
    row_terms: dict = {}
    rhs: dict = {}
    binaries = set()
    bounds = {}
    sos, quad = [], {}
    section = None
    maximize = False
    for ln, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        if raw.startswith("*"):
            parts = raw.split()
            if len(parts) >= 3 and parts[1] == "meta":
                key, val = parts[2], " ".join(parts[3:])
                if key == "__const":
                    m.const = float(val)
                else:
                    m.meta[key] = _meta_value(val)
            elif len(parts) == 3 and parts[1] == "binary":
                binaries.add(parts[2])
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0]
            if section == "NAME":
                m.name = tok[1] if len(tok) > 1 else ""
            continue
        try:
            if section == "OBJSENSE":
                maximize = tok[0].upper() in ("MAX", "MAXIMIZE")
            elif section == "ROWS":
                if tok[0] != "N":
                    rows_sense[tok[1]] = tok[0]
                    rows_order.append(tok[1])
                    row_terms[tok[1]] = []
            elif section == "COLUMNS":
                name = tok[0]
                if name not in m._index:
                    m.add_var(name, "C", 0.0, math.inf)
                j = m._index[name]
                for r, a in zip(tok[1::2], tok[2::2]):
                    if r == "obj":
                        m.obj[j] = float(a)
                    else:
                        row_terms[r].append((j, float(a)))
            elif section == "RHS":
                for r, a in zip(tok[1::2], tok[2::2]):
                    rhs[r] = float(a)
            elif section == "BOUNDS":
                kind, name = tok[0], tok[2]
                val = float(tok[3]) if len(tok) > 3 else None
                bounds.setdefault(name, []).append((kind, val))
            elif section == "SOS":
                if tok[0] in ("S1", "S2"):
                    sos.append((tok[2], []))
                else:
                    sos[-1][1].append((float(tok[1]), tok[0]))
            elif section == "QMATRIX":
                if tok[0] != tok[1]:
                    raise SolverError("only diagonal quadratic terms are supported")
                quad[tok[0]] = float(tok[2])
            else:
                raise ValueError(f"unexpected section {section!r}")
        except (IndexError, ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{ln}: cannot parse MPS line: {raw.strip()}") from exc
    if not maximize:
        raise ValueError(f"{path}: only maximization models are supported")

    def unlarge(x):
        return math.inf if x >= 1e30 else (-math.inf if x <= -1e30 else x)

    for name, items in bounds.items():
        j = m._index[name]
        for kind, val in items:
            if kind == "BV":
                m.kinds[j], m.lb[j], m.ub[j] = "B", 0.0, 1.0
            elif kind == "FX":
                m.lb[j] = m.ub[j] = val
            elif kind == "FR":
                m.lb[j], m.ub[j] = -math.inf, math.inf
            elif kind == "MI":
                m.lb[j] = -math.inf
            elif kind == "PL":
                m.ub[j] = math.inf
            elif kind == "LO":
                m.lb[j] = unlarge(val)
            elif kind == "UP":
                m.ub[j] = unlarge(val)
    for name in binaries:
        m.kinds[m._index[name]] = "B"
    for name, q in quad.items():
        m.quad[m._index[name]] = q
    for r in rows_order:
        terms = row_terms[r]
        m.rows.append((r, rows_sense[r], tuple(j for j, _ in terms),
                       tuple(a for _, a in terms), rhs.get(r, 0.0)))
    for name, members in sos:
        members.sort()
        idx = tuple(m._index[v] for _, v in members)
        m.sos2.append((name, idx))
        for j in idx:
            if m.kinds[j] == "C":
                m.kinds[j] = "S"
    # an all-zero column keeps an explicit zero objective entry
    return m


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------
@dataclass
class MipSolution:
    """Solver result in model variable order."""

    x: np.ndarray
    objective: float
    status: str
    source: str
    leaves: int = 0
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def parse_scip_solution(path, names) -> tuple[str, float, np.ndarray]:
    """Read a SCIP ``write solution`` file into a vector ordered by ``names``."""
    index = {k: i for i, k in enumerate(names)}
    x = np.zeros(len(names))
    status, obj = "unknown", float("nan")
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            tok = raw.split()
            if not tok:
                continue
            if raw.startswith("solution status:"):
                status = raw.split(":", 1)[1].strip()
            elif raw.startswith("objective value:"):
                obj = float(tok[-1])
            elif tok[0] in index:
                x[index[tok[0]]] = float(tok[1])
    status = "optimal" if status.startswith("optimal") else status
    return status, obj, x


DEFAULT_TEMPLATE = ('{exe} -c "read {mps} set limits time {time_limit} set limits gap {gap} '
                    'optimize write solution {sol} quit"')


@dataclass
class SolverShim:
    """Out-of-process MIQP solve through an MPS file.

    ``executable`` falls back to the ``UPHES_SOLVER`` environment variable.
    ``template`` is formatted with ``exe``, ``mps``, ``sol``, ``time_limit`` and
    ``gap`` and split with shell rules.  ``parser`` reads the solution file.
    """

    executable: str | None = None
    template: str = DEFAULT_TEMPLATE
    time_limit: float = 3600.0
    gap: float = 0.01
    parser: object = parse_scip_solution

    def resolved(self) -> str | None:
        return self.executable or os.environ.get(SOLVER_ENV) or None

    def solve(self, m: MipModel, workdir=None) -> MipSolution:
        exe = self.resolved()
        if not exe:
            raise SolverError(f"no solver executable configured (set {SOLVER_ENV})")
        with tempfile.TemporaryDirectory(dir=workdir) as tmp:
            mps = os.path.join(tmp, "model.mps")
            sol = os.path.join(tmp, "model.sol")
            export_model(m, mps)
            cmd = shlex.split(self.template.format(exe=shlex.quote(exe), mps=mps, sol=sol,
                                                   time_limit=self.time_limit, gap=self.gap))
            t0 = time.perf_counter()
            res = subprocess.run(cmd, capture_output=True, text=True)
            secs = time.perf_counter() - t0
            if res.returncode != 0 or not os.path.exists(sol):
                raise SolverError(f"solver failed with code {res.returncode}: "
                                  f"{res.stderr.strip()[-500:]}")
            status, obj, x = self.parser(sol, m.names)
        return MipSolution(x, obj, status, os.path.basename(exe), 0, secs)


def scip_available() -> bool:
    return importlib.util.find_spec("pyscipopt") is not None


def solve_with_scip(m: MipModel, time_limit: float = 3600.0, gap: float = 0.0,
                    path=None) -> MipSolution:
    """In-process SCIP solve of the exported MPS file (optional dependency)."""
    try:
        import pyscipopt
    except ImportError as exc:
        raise SolverError("pyscipopt is not installed") from exc
    with tempfile.TemporaryDirectory() as tmp:
        mps = path or os.path.join(tmp, "model.mps")
        export_model(m, mps)
        s = pyscipopt.Model()
        s.hideOutput()
        s.readProblem(mps)
        s.setParam("limits/time", time_limit)
        s.setParam("limits/gap", gap)
        t0 = time.perf_counter()
        s.optimize()
        secs = time.perf_counter() - t0
        st = s.getStatus()
        x = np.zeros(m.n)
        obj = float("nan")
        if s.getNSols() > 0:
            best = s.getBestSol()
            by_name = {v.name: v for v in s.getVars()}
            for j, name in enumerate(m.names):
                if name in by_name:
                    x[j] = s.getSolVal(best, by_name[name])
            obj = m.objective_value(x)
    return MipSolution(x, obj, "optimal" if st == "optimal" else st, "scip", 0, secs)


def _propagate(lb, ub, rows, binary, tol=1e-9, rounds=30):
    """Interval bound tightening over linear rows; False if infeasible."""
    for _ in range(rounds):
        changed = False
        for _, sense, idx, coef, rhs in rows:
            if not idx:
                continue
            a = coef
            lo_t = [a[k] * (lb[j] if a[k] > 0 else ub[j]) for k, j in enumerate(idx)]
            hi_t = [a[k] * (ub[j] if a[k] > 0 else lb[j]) for k, j in enumerate(idx)]
            lo_s, hi_s = sum(lo_t), sum(hi_t)
            scale = 1.0 + abs(rhs)
            if sense in ("E", "L") and lo_s > rhs + tol * scale:
                return False
            if sense in ("E", "G") and hi_s < rhs - tol * scale:
                return False
            if math.isinf(lo_s) and math.isinf(hi_s):
                continue
            for k, j in enumerate(idx):
                ak = a[k]
                if sense in ("E", "L") and not math.isinf(lo_s):
                    # ak x_j <= rhs - (lo_s - lo_t[k])
                    cap = (rhs - (lo_s - lo_t[k])) / ak
                    if ak > 0 and cap < ub[j] - tol * (1.0 + abs(cap)):
                        ub[j] = math.floor(cap + tol) if binary[j] else cap
                        changed = True
                    elif ak < 0 and cap > lb[j] + tol * (1.0 + abs(cap)):
                        lb[j] = math.ceil(cap - tol) if binary[j] else cap
                        changed = True
                if sense in ("E", "G") and not math.isinf(hi_s):
                    cap = (rhs - (hi_s - hi_t[k])) / ak
                    if ak > 0 and cap > lb[j] + tol * (1.0 + abs(cap)):
                        lb[j] = math.ceil(cap - tol) if binary[j] else cap
                        changed = True
                    elif ak < 0 and cap < ub[j] - tol * (1.0 + abs(cap)):
                        ub[j] = math.floor(cap + tol) if binary[j] else cap
                        changed = True
                if lb[j] > ub[j] + tol * (1.0 + abs(lb[j])):
                    return False
                if lb[j] > ub[j]:
                    lb[j] = ub[j]
        if not changed:
            return True
    return True


def _row_arrays(m: MipModel, lb, ub):
    """Dense ``A x = b`` and ``G x <= g`` over free columns, plus the fixed part."""
    n = m.n
    fixed = np.array([lb[j] == ub[j] for j in range(n)])
    xf = np.where(fixed, np.asarray(lb), 0.0)
    free = np.flatnonzero(~fixed)
    pos = -np.ones(n, dtype=int)
    pos[free] = np.arange(free.size)
    A, b, G, g = [], [], [], []
    for name, sense, idx, coef, rhs in m.rows:
        r = np.zeros(free.size)
        off = 0.0
        for j, a in zip(idx, coef):
            if fixed[j]:
                off += a * xf[j]
            else:
                r[pos[j]] += a
        val = rhs - off
        if not np.any(r):
            scale = 1.0 + abs(rhs)
            bad = (abs(val) > 1e-9 * scale if sense == "E" else
                   (val < -1e-9 * scale if sense == "L" else val > 1e-9 * scale))
            if bad:
                return None
            continue
        if sense == "E":
            A.append(r)
            b.append(val)
        elif sense == "L":
            G.append(r)
            g.append(val)
        else:
            G.append(-r)
            g.append(-val)
    for k, j in enumerate(free):
        e = np.zeros(free.size)
        if not math.isinf(ub[j]):
            e[k] = 1.0
            G.append(e.copy())
            g.append(ub[j])
        if not math.isinf(lb[j]):
            e[k] = -1.0
            G.append(e.copy())
            g.append(-lb[j])
    nf = free.size
    A = np.array(A) if A else np.zeros((0, nf))
    G = np.array(G) if G else np.zeros((0, nf))
    return free, xf, A, np.array(b), G, np.array(g)


def _feasible_lp(m: MipModel, lb, ub) -> bool:
    bnds = [(None if math.isinf(lo) else lo, None if math.isinf(hi) else hi)
            for lo, hi in zip(lb, ub)]
    Ae, be, Au, bu = [], [], [], []
    for _, sense, idx, coef, rhs in m.rows:
        r = np.zeros(m.n)
        r[list(idx)] = coef
        if sense == "E":
            Ae.append(r)
            be.append(rhs)
        elif sense == "L":
            Au.append(r)
            bu.append(rhs)
        else:
            Au.append(-r)
            bu.append(-rhs)
    res = linprog(np.zeros(m.n), A_ub=np.array(Au) if Au else None, b_ub=bu or None,
                  A_eq=np.array(Ae) if Ae else None, b_eq=be or None, bounds=bnds,
                  method="highs")
    return res.status != 2


def _solve_leaf(m: MipModel, lb, ub, tol: QpTolerances):
    arrs = _row_arrays(m, lb, ub)
    if arrs is None:
        return None
    free, xf, A, b, G, g = arrs
    obj = np.asarray(m.obj)
    quad = np.asarray(m.quad)
    x = xf.copy()
    if free.size:
        scale = np.array([max(1.0, abs(lb[j]) if not math.isinf(lb[j]) else 1.0,
                              abs(ub[j]) if not math.isinf(ub[j]) else 1.0) for j in free])
        xs, _, _, status, _ = solve_dense(-quad[free], -obj[free], A, b, G, g, scale, tol)
        if status != "optimal":
            return None
        x[free] = xs
    return x, m.objective_value(x)


def enumerate_miqp(m: MipModel, max_leaves: int = 20000,
                   tol: QpTolerances | None = None) -> MipSolution:
    """Exact optimum of a small MIQP by enumerating binaries and SOS2 segments.

    Every combination of binary values and adjacent SOS2 supports that
    survives bound propagation and an LP feasibility check becomes a convex
    QP.  Not a branch-and-bound: no objective bounds are used, so the effort
    grows with the number of feasible combinations.

    Raises
    ------
    SearchSpaceError
        If more than ``max_leaves`` leaves would be solved.
    """
    t0 = time.perf_counter()
    tol = tol or QpTolerances()
    if any(q > 0.0 for q in m.quad):
        raise SolverError("objective is not concave")
    binary = [k == "B" for k in m.kinds]
    best_x, best_v = None, -math.inf
    leaves = 0
    stack = [(list(m.lb), list(m.ub))]
    while stack:
        lb, ub = stack.pop()
        if not _propagate(lb, ub, m.rows, binary):
            continue
        if not _feasible_lp(m, lb, ub):
            continue
        j = next((j for j in range(m.n) if binary[j] and lb[j] < ub[j]), None)
        if j is not None:
            for val in (1.0, 0.0):   # popped in order 0 then 1
                lb2, ub2 = list(lb), list(ub)
                lb2[j] = ub2[j] = val
                stack.append((lb2, ub2))
            continue
        branch = None
        for _, idx in m.sos2:
            nz = [k for k, jj in enumerate(idx) if ub[jj] > 0.0]
            if nz and nz[-1] - nz[0] > 1:
                branch = (idx, nz)
                break
        if branch is not None:
            idx, nz = branch
            segs = sorted({k for k in nz if k + 1 < len(idx)} | {k - 1 for k in nz if k > 0})
            for k in reversed(segs):
                lb2, ub2 = list(lb), list(ub)
                for kk, jj in enumerate(idx):
                    if kk != k and kk != k + 1:
                        ub2[jj] = 0.0
                        lb2[jj] = min(lb2[jj], 0.0)
                stack.append((lb2, ub2))
            continue
        leaves += 1
        if leaves > max_leaves:
            raise SearchSpaceError(f"more than {max_leaves} leaves")
        res = _solve_leaf(m, lb, ub, tol)
        if res is not None and res[1] > best_v:
            best_x, best_v = res
    secs = time.perf_counter() - t0
    if best_x is None:
        return MipSolution(np.zeros(m.n), float("nan"), "infeasible", "enumeration", leaves, secs)
    return MipSolution(best_x, best_v, "optimal", "enumeration", leaves, secs)


def solve_mip(m: MipModel, shim: SolverShim | None = None, **kw) -> MipSolution:
    """Solve with the configured executable, else SCIP in-process, else enumeration."""
    shim = shim or SolverShim()
    if shim.resolved():
        return shim.solve(m)
    if scip_available():
        return solve_with_scip(m, **kw)
    return enumerate_miqp(m)


def mip_schedule(m: MipModel, x) -> np.ndarray:
    """Net hourly power of a GL or PW solution vector."""
    x = np.asarray(x, dtype=float)
    T = int(m.meta.get("horizon", 0))
    out = np.zeros(T)
    for t in range(T):
        s = _tag(t)
        if f"p_{s}" in m._index:
            out[t] = x[m.var(f"p_{s}")]
        else:
            out[t] = sum(x[m.var(f"p{k}_{s}")] for k in _MODE_TAG.values())
    return out


def gl_enumerate(prices, glob: GlobalLinearModel, config: PlantConfig, n_levels: int = 101):
    """Brute-force optimum of the GL model over a power grid per active mode.

    Each hour is idle or one of ``n_levels`` equally spaced powers between
    the affine envelope bounds at the current affine head.

    Returns
    -------
    value : float
    p : ndarray
        Best schedule (``-inf`` value and zeros if nothing is feasible).
    """
    lam = np.asarray(prices, dtype=float)
    T = lam.size
    n_act = 1 + len(ACTIVE) * n_levels
    if n_act ** T > 5e6:
        raise SearchSpaceError(f"{n_act}**{T} combinations exceed the limit")
    fr = np.linspace(0.0, 1.0, n_levels)
    dt_h, C = config.dt_hours, config.c_op
    v_end_cap = min(config.v_target, config.v_max)
    # states as flat arrays: (value, v, p-history)
    val = np.zeros(1)
    v = np.array([config.v_init])
    hist = np.zeros((1, 0))
    for t in range(T):
        h = glob.head(v)
        ps = [np.zeros_like(h)[:, None]]
        qs = [np.zeros_like(h)[:, None]]
        for md in ACTIVE:
            lo, hi = glob.power_bounds(md, h)
            p = lo[:, None] + fr[None, :] * (hi - lo)[:, None]
            ps.append(p)
            qs.append(glob.flow(md, p, h[:, None]))
        P = np.concatenate(ps, axis=1)
        Q = np.concatenate(qs, axis=1)
        vn = v[:, None] + config.dt * Q
        ok = (vn >= config.v_min) & (vn <= config.v_max)
        ok &= ((h >= config.h_min) & (h <= config.h_max))[:, None]
        if t == T - 1:
            ok &= vn <= v_end_cap
        nv = val[:, None] + dt_h * (lam[t] * P - C * P * P)
        sel = np.flatnonzero(ok.ravel())
        src = sel // P.shape[1]
        val = nv.ravel()[sel]
        v = vn.ravel()[sel]
        hist = np.concatenate([hist[src], P.ravel()[sel][:, None]], axis=1)
        if val.size == 0:
            return -math.inf, np.zeros(T)
    k = int(np.argmax(val))
    return float(val[k]), hist[k]


# ---------------------------------------------------------------------------
# oracles on the true plant
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DpGrid:
    """Volume knots and an action list for backward induction.

    An action ``(mode, frac)`` schedules the power ``lo + frac * (hi - lo)``
    inside the envelope at the current head; ``mode`` 0 is idle.
    """

    knots: np.ndarray
    act_mode: np.ndarray
    act_frac: np.ndarray

    def validate(self, config: PlantConfig) -> None:
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 1 or k.size < 1 or not np.all(np.isfinite(k)):
            raise ValueError("volume knots must be a non-empty finite 1-D array")
        if np.any(np.diff(k) <= 0):
            raise ValueError("volume knots must be strictly increasing")
        if k[0] < config.v_min or k[-1] > config.v_max:
            raise ValueError("volume knots leave the admissible range")
        for name, val in (("v_init", config.v_init), ("v_target", config.v_target)):
            if not np.any(k == val):
                raise ValueError(f"volume knots must contain {name}")
        if len(self.act_mode) == 0 or len(self.act_mode) != len(self.act_frac):
            raise ValueError("action list is empty or ragged")
        if not set(int(x) for x in self.act_mode) <= {0, 1, 2}:
            raise ValueError("action modes must be 0, 1 or 2")
        if 0 not in set(int(x) for x in self.act_mode):
            raise ValueError("action list must contain the idle action")
        f = np.asarray(self.act_frac, dtype=float)
        if np.any(f < 0.0) or np.any(f > 1.0):
            raise ValueError("action fractions must lie in [0, 1]")

    @property
    def n_actions(self) -> int:
        return len(self.act_mode)


def make_actions(n_levels: int = 7, modes=(1, 2)) -> tuple[np.ndarray, np.ndarray]:
    """Idle plus ``n_levels`` equally spaced envelope fractions per active mode."""
    if n_levels < 1:
        raise ValueError("need at least one power level")
    fr = np.linspace(0.0, 1.0, n_levels) if n_levels > 1 else np.array([1.0])
    am = [0] + [int(m) for m in modes for _ in fr]
    af = [0.0] + [float(f) for _ in modes for f in fr]
    return np.array(am, dtype=np.intc), np.array(af)


def default_dp_grid(config: PlantConfig, n_knots: int = 41, n_levels: int = 7) -> DpGrid:
    """Uniform knots over the admissible volume range plus ``v_init`` and ``v_target``."""
    k = np.linspace(config.v_min, config.v_max, n_knots)
    k = np.unique(np.concatenate([k, [config.v_init, config.v_target]]))
    am, af = make_actions(n_levels)
    return DpGrid(k, am, af)


def reachable_volumes(horizon: int, act_mode, act_frac, model: UpcModel,
                      config: PlantConfig) -> np.ndarray:
    """Every volume the plant can reach within ``horizon`` hours.

    Used to build DP grids whose knots contain every visited state exactly.
    """
    k = get_kernel(config, model)
    level = {config.v_init}
    seen = {config.v_init, config.v_target}
    for _ in range(horizon):
        nxt = set()
        for v in level:
            h = k.head(v)
            for md, fr in zip(act_mode, act_frac):
                ph = k.action_power(int(md), float(fr), h)
                nxt.add(k.step(v, h, ph)[2])
        seen |= nxt
        level = nxt
    return np.array(sorted(seen))


def _trajectory(p_hat, model, config, role):
    from .simulator import simulate
    out = simulate(p_hat, model, config)
    return out.trajectory.with_role(role), out


HARD_TERMINAL_FACTOR = 1e6


def dp_schedule(prices, grid: DpGrid, model: UpcModel, config: PlantConfig,
                hard_terminal: bool = False):
    """Backward induction over volume knots under the nonlinear plant.

    Off-knot successor volumes take the linearly interpolated value of the
    neighbouring knots.  The schedule is reconstructed greedily forward from
    ``v_init`` against the computed value table.  With ``hard_terminal`` the
    terminal volume penalty is scaled by a prohibitive factor, so the
    schedule ends at or below ``v_target`` like a solution of the
    constrained scheduling problem.

    Returns
    -------
    traj : Trajectory
        Simulated trajectory of the reconstructed schedule.
    value : float
        Value of the DP at ``v_init``.
    info : dict
        ``schedule`` (scheduled powers), ``choice`` (action indices), ``V``.
    """
    lam = np.asarray(prices, dtype=float)
    if lam.ndim != 1 or lam.size == 0 or not np.all(np.isfinite(lam)):
        raise ValueError("prices must be a non-empty finite 1-D array")
    grid.validate(config)
    k = get_kernel(config, model)
    lam_med = float(np.median(lam))
    if hard_terminal:
        lam_med = max(abs(lam_med), 1.0) * HARD_TERMINAL_FACTOR
    knots = np.asarray(grid.knots, dtype=float)
    V, _ = k.dp_solve(lam, lam_med, knots, grid.act_mode, grid.act_frac)
    i0 = int(np.flatnonzero(knots == config.v_init)[0])
    value = float(V[0, i0])
    if not np.isfinite(value):
        raise ValueError("no admissible action sequence from the initial volume")
    sched, choice = k.dp_rollout(lam, knots, V, grid.act_mode, grid.act_frac)
    traj, _ = _trajectory(sched, model, config, "baseline")
    return traj, value, {"schedule": sched, "choice": choice, "V": V}


def enumerate_exact(prices, act_mode, act_frac, model: UpcModel, config: PlantConfig,
                    max_horizon: int = 6, limit: float = 1e6):
    """Best action sequence by brute force through the simulator.

    Ties go to the lexicographically smallest sequence of action indices.

    Returns
    -------
    traj : Trajectory
    value : float
        Ex-post profit of the best sequence.
    info : dict
        ``schedule``, ``choice`` and ``leaves``.
    """
    lam = np.asarray(prices, dtype=float)
    T = lam.size
    A = len(act_mode)
    if T < 1 or T > max_horizon:
        raise SearchSpaceError(f"horizon {T} outside [1, {max_horizon}]")
    if A == 0 or float(A) ** T > limit:
        raise SearchSpaceError(f"{A}**{T} action sequences exceed the limit {limit:g}")
    k = get_kernel(config, model)
    best_idx, best, leaves = k.enumerate_best(lam, float(np.median(lam)), act_mode, act_frac)
    sched = np.zeros(T)
    v, h = config.v_init, k.head(config.v_init)
    for t, a in enumerate(best_idx):
        sched[t] = k.action_power(int(act_mode[a]), float(act_frac[a]), h)
        v = k.step(v, h, sched[t])[2]
        h = k.head(v)
    traj, _ = _trajectory(sched, model, config, "baseline")
    return traj, float(best), {"schedule": sched, "choice": np.asarray(best_idx),
                               "leaves": int(leaves)}
