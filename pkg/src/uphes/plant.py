"""Plant parameters, unit performance curves and reservoir geometry.

The unit performance curve (UPC) maps power and hydraulic head to water flow
through a bivariate polynomial fitted separately for turbine and pump modes.
The upper reservoir is a frustum and the lower reservoir a set of identical
spherical pits, which makes both volume-height relations cubic.  The gross
head is the difference of the two water levels plus a datum offset.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from ._kernels import geo as _geo
from .errors import DomainError, FitError, HeadBoundError

_HEAD_TOL = 1e-9


class Mode(enum.IntEnum):
    """Operating mode of the reversible unit."""

    IDLE = 0
    TURBINE = 1
    PUMP = 2

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            aliases = {"I": "IDLE", "T": "TURBINE", "P": "PUMP"}
            return cls[aliases.get(key, key)]
        return cls(int(value))


def _check_active(mode) -> Mode:
    m = Mode.parse(mode)
    if m == Mode.IDLE:
        raise ValueError("idle mode has no flow curve; the caller sets q = 0")
    return m


# ---------------------------------------------------------------------------
# plant configuration
# ---------------------------------------------------------------------------

def _frustum_radius(volume: float, height: float, slope: float) -> float:
    # positive root of pi*h*r^2 + pi*m*h^2*r + (pi*m^2/3)h^3 - V = 0
    a = math.pi * height
    b = math.pi * slope * height ** 2
    c = math.pi * slope ** 2 * height ** 3 / 3.0 - volume
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise DomainError("no real base radius for the requested frustum")
    r = (-b + math.sqrt(disc)) / (2.0 * a)
    if r <= 0.0:
        raise DomainError("frustum slope too steep for the requested capacity and height")
    return r


@dataclass(frozen=True)
class PlantConfig:
    """Physical and economic parameters of an underground pumped-hydro plant.

    Volumes refer to the lower reservoir unless stated otherwise.  ``r_base``
    and ``pit_radius`` default to values that make the upper and lower
    reservoirs hold exactly ``v_up_cap`` and ``v_low_cap``.

    Attributes
    ----------
    h_min, h_max, h_init : float
        Head bounds and the head at ``v_init`` [m].
    v_init, v_target, v_total : float
        Initial and terminal-target lower volume, total water [m^3].
    v_low_cap, v_up_cap : float
        Reservoir capacities [m^3].
    up_fill_max : float
        Upper-reservoir fill height at capacity [m].
    c_op : float
        Quadratic operating cost [currency/MW^2 per hour].
    dt : float
        Step length [s].
    slope_m, r_base : float
        Frustum slope and base radius [m].
    n_pits, pit_radius : int, float
        Number and radius [m] of spherical pits.
    rho, g, eta_ref : float
        Water density, gravity and reference efficiency for the volume penalty.
    idle_eps : float
        Power magnitude [MW] below which an hour counts as idle.
    """

    h_min: float = 50.0
    h_max: float = 99.0
    h_init: float = 79.0
    v_init: float = 294000.0
    v_target: float = 294000.0
    v_total: float = 588000.0
    v_low_cap: float = 588000.0
    v_up_cap: float = 588000.0
    up_fill_max: float = 30.0
    c_op: float = 0.4
    dt: float = 3600.0
    slope_m: float = 1.8
    r_base: float | None = None
    n_pits: int = 100
    pit_radius: float | None = None
    rho: float = 1000.0
    g: float = 9.81
    eta_ref: float = 0.9
    idle_eps: float = 1e-6

    def __post_init__(self):
        if self.pit_radius is None:
            R = (3.0 * self.v_low_cap / (4.0 * math.pi * self.n_pits)) ** (1.0 / 3.0)
            object.__setattr__(self, "pit_radius", R)
        if self.r_base is None:
            object.__setattr__(self, "r_base",
                               _frustum_radius(self.v_up_cap, self.up_fill_max, self.slope_m))
        self._validate()

    def _validate(self):
        if not 0.0 < self.h_min < self.h_max:
            raise DomainError("require 0 < h_min < h_max")
        if not self.h_min <= self.h_init <= self.h_max:
            raise DomainError("h_init must lie in [h_min, h_max]")
        if not 0.0 <= self.v_init <= self.v_total:
            raise DomainError("v_init must lie in [0, v_total]")
        if not 0.0 < self.v_target <= self.v_total:
            raise DomainError("v_target must lie in (0, v_total]")
        if self.dt <= 0.0 or self.c_op < 0.0:
            raise DomainError("require dt > 0 and c_op >= 0")
        if self.n_pits < 1 or self.pit_radius <= 0.0 or self.r_base <= 0.0:
            raise DomainError("reservoir geometry must be positive")
        if abs(self.low_cap - self.v_low_cap) > 1e-6 * self.v_low_cap:
            raise DomainError("pit geometry does not hold the configured lower capacity")
        if abs(self.up_cap - self.v_up_cap) > 1e-6 * self.v_up_cap:
            raise DomainError("frustum geometry does not hold the configured upper capacity")
        if self.v_total - self.v_init > self.up_cap or self.v_init > self.low_cap:
            raise DomainError("initial water split does not fit the reservoirs")

    # geometric capacities (exact for the stored radii)
    @cached_property
    def low_cap(self) -> float:
        return self.n_pits * 4.0 / 3.0 * math.pi * self.pit_radius ** 3

    @cached_property
    def up_cap(self) -> float:
        return _geo.vup(self.up_fill_max, self.r_base, self.slope_m)

    def raw_head(self, v_low: float) -> float:
        """Level difference without datum offset."""
        hu = _geo.inv_vup(self.v_total - v_low, self.r_base, self.slope_m,
                          self.up_fill_max, self.up_cap)
        hl = _geo.inv_vlow(v_low, self.n_pits, self.pit_radius, self.low_cap)
        return hu - hl

    @cached_property
    def head_offset(self) -> float:
        return self.h_init - self.raw_head(self.v_init)

    @cached_property
    def v_phys(self) -> tuple[float, float]:
        """Lower volumes for which both reservoirs can hold the split."""
        return max(0.0, self.v_total - self.up_cap), min(self.low_cap, self.v_total)

    @cached_property
    def _v_bounds(self) -> tuple[float, float]:
        lo, hi = self.v_phys
        off = self.head_offset

        def f(v, target):
            return self.raw_head(v) + off - target

        v_min = lo
        if f(lo, self.h_max) > 0.0:
            v_min = brentq(f, lo, hi, args=(self.h_max,), xtol=1e-9, rtol=1e-15)
            # step inward until the head is within bounds
            while self.raw_head(v_min) + off > self.h_max:
                v_min = np.nextafter(v_min, hi)
        v_max = hi
        if f(hi, self.h_min) < 0.0:
            v_max = brentq(f, lo, hi, args=(self.h_min,), xtol=1e-9, rtol=1e-15)
            while self.raw_head(v_max) + off < self.h_min:
                v_max = np.nextafter(v_max, lo)
        return float(v_min), float(v_max)

    @property
    def v_min(self) -> float:
        """Smallest admissible lower volume (head at most ``h_max``)."""
        return self._v_bounds[0]

    @property
    def v_max(self) -> float:
        """Largest admissible lower volume (head at least ``h_min``)."""
        return self._v_bounds[1]

    @property
    def dt_hours(self) -> float:
        return self.dt / 3600.0

    def replace(self, **changes) -> "PlantConfig":
        """Copy with fields changed; derived radii are recomputed unless given."""
        base = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for key in ("r_base", "pit_radius"):
            if key not in changes and any(k in changes for k in
                                          ("v_low_cap", "v_up_cap", "up_fill_max",
                                           "slope_m", "n_pits")):
                base[key] = None
        base.update(changes)
        return PlantConfig(**base)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


_INT_FIELDS = {"n_pits"}


def save_config(config: PlantConfig, path) -> None:
    """Write ``key = value`` lines; floats use ``repr`` so they round-trip."""
    lines = [f"{k} = {v!r}" for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path) -> PlantConfig:
    """Read a flat ``key = value`` file; unknown keys are rejected."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[plant]\n" + text)
    names = {f.name for f in dataclasses.fields(PlantConfig)}
    kwargs = {}
    for key, raw in cp["plant"].items():
        if key not in names:
            raise DomainError(f"unknown config key {key!r}")
        if raw.strip() in ("None", ""):
            kwargs[key] = None
        elif key in _INT_FIELDS:
            kwargs[key] = int(raw)
        else:
            kwargs[key] = float(raw)
    return PlantConfig(**kwargs)


# ---------------------------------------------------------------------------
# reservoir geometry
# ---------------------------------------------------------------------------

def v_up(h_up: float, config: PlantConfig) -> float:
    """Upper-reservoir volume at fill height ``h_up`` [m^3]."""
    if not 0.0 <= h_up <= config.up_fill_max:
        raise DomainError(f"upper fill height {h_up} outside [0, {config.up_fill_max}]")
    return _geo.vup(float(h_up), config.r_base, config.slope_m)


def v_low(h_low: float, config: PlantConfig) -> float:
    """Lower-reservoir volume at pit fill height ``h_low`` [m^3]."""
    if not 0.0 <= h_low <= 2.0 * config.pit_radius:
        raise DomainError(f"pit fill height {h_low} outside [0, {2.0 * config.pit_radius}]")
    return _geo.vlow(float(h_low), config.n_pits, config.pit_radius)


def invert_v_up(v: float, config: PlantConfig) -> float:
    """Fill height of the upper reservoir holding ``v``."""
    if not 0.0 <= v <= config.up_cap * (1.0 + 1e-12):
        raise DomainError(f"upper volume {v} outside [0, {config.up_cap}]")
    return _geo.inv_vup(float(v), config.r_base, config.slope_m,
                        config.up_fill_max, config.up_cap)


def invert_v_low(v: float, config: PlantConfig) -> float:
    """Pit fill height holding lower volume ``v``."""
    if not 0.0 <= v <= config.low_cap * (1.0 + 1e-12):
        raise DomainError(f"lower volume {v} outside [0, {config.low_cap}]")
    return _geo.inv_vlow(float(v), config.n_pits, config.pit_radius, config.low_cap)


def gross_head(v_low_: float, config: PlantConfig) -> float:
    """Gross head at lower volume ``v_low_`` including the datum offset.

    Raises
    ------
    DomainError
        If the water split does not fit the reservoirs.
    HeadBoundError
        If the head falls outside ``[h_min, h_max]``.
    """
    v = float(v_low_)
    if not 0.0 <= v <= config.v_total:
        raise DomainError(f"lower volume {v} outside [0, v_total]")
    if config.v_total - v > config.up_cap * (1.0 + 1e-12) or v > config.low_cap * (1.0 + 1e-12):
        raise DomainError(f"volume split at v_low={v} exceeds a reservoir capacity")
    h = config.raw_head(v) + config.head_offset
    if h < config.h_min - _HEAD_TOL or h > config.h_max + _HEAD_TOL:
        raise HeadBoundError(f"head {h:.6f} m at v_low={v} outside [{config.h_min}, {config.h_max}]")
    return h


def head_derivatives(v_low_: float, config: PlantConfig) -> tuple[float, float]:
    """First and second derivatives of gross head with respect to lower volume."""
    v = float(v_low_)
    r, m = config.r_base, config.slope_m
    n, R = config.n_pits, config.pit_radius
    hu = _geo.inv_vup(config.v_total - v, r, m, config.up_fill_max, config.up_cap)
    hl = _geo.inv_vlow(v, n, R, config.low_cap)
    du = _geo.dvup(hu, r, m)
    dl = _geo.dvlow(hl, n, R)
    d2u = 2.0 * math.pi * m * r + 2.0 * math.pi * m * m * hu
    d2l = 2.0 * n * math.pi * R - 2.0 * n * math.pi * hl
    # U(V - v): d/dv = -1/du, d2/dv2 = -d2u/du^3 ; L(v): 1/dl, -d2l/dl^3
    h1 = -1.0 / du - 1.0 / dl
    h2 = -d2u / du ** 3 + d2l / dl ** 3
    return h1, h2


def volume_from_head(h: float, config: PlantConfig, guess: float | None = None) -> float:
    """Lower volume at which the gross head equals ``h`` (inverse of ``gross_head``).

    A nearby ``guess`` enables a pure Newton path; otherwise the root is
    bracketed on the physical volume range.
    """
    if not config.h_min - _HEAD_TOL <= h <= config.h_max + _HEAD_TOL:
        raise HeadBoundError(f"head {h} outside [{config.h_min}, {config.h_max}]")
    lo, hi = config.v_phys
    off = config.head_offset
    if guess is not None and lo < guess < hi:
        v = float(guess)
        for _ in range(30):
            fx = config.raw_head(v) + off - h
            d1, _ = head_derivatives(v, config)
            if not math.isfinite(d1) or d1 == 0.0:
                break
            step = fx / d1
            vn = v - step
            if not lo < vn < hi:
                break
            v = vn
            if abs(step) <= 1e-9 * max(1.0, abs(v)):
                return v
    f_lo = config.raw_head(lo) + off - h
    f_hi = config.raw_head(hi) + off - h
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0.0:
        raise HeadBoundError(f"head {h} not attained on the physical volume range")
    # bracketed Newton on the decreasing head curve
    v = brentq(lambda x: config.raw_head(x) + off - h, lo, hi, xtol=1e-10, rtol=1e-15)
    for _ in range(3):
        fx = config.raw_head(v) + off - h
        d1, _ = head_derivatives(v, config)
        if fx == 0.0 or not math.isfinite(d1) or d1 == 0.0:
            break
        vn = v - fx / d1
        if not lo <= vn <= hi or abs(vn - v) > 1.0:
            break
        v = vn
    return float(v)


def volume_head_derivatives(h: float, config: PlantConfig,
                            guess: float | None = None) -> tuple[float, float, float]:
    """Volume ``g(h)`` and its first two derivatives, ``g = gross_head^-1``."""
    v = volume_from_head(h, config, guess)
    h1, h2 = head_derivatives(v, config)
    g1 = 1.0 / h1
    g2 = -h2 / h1 ** 3
    return v, g1, g2


# ---------------------------------------------------------------------------
# unit performance curves
# ---------------------------------------------------------------------------

def monomials(degree: int) -> list[tuple[int, int]]:
    """Canonical ``(a, b)`` exponent order with ``a + b <= degree``."""
    return [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]


@dataclass(frozen=True)
class UpcModel:
    """Per-mode polynomial flow surrogate with head-dependent power envelopes.

    Turbine power and flow are positive; pump power and flow are negative.

    Attributes
    ----------
    degree : int
        Total polynomial degree ``d``.
    coef : dict
        ``Mode -> ndarray`` of length ``(d+1)(d+2)/2`` in :func:`monomials` order.
    envelope : dict
        ``Mode -> (pmin_coefs, pmax_coefs)`` ascending powers of head.
    h_range : tuple
        Head interval on which the model is valid.
    r2 : dict
        Per-mode coefficient of determination of the fit (``nan`` if not fitted).
    """

    degree: int
    coef: Mapping[Mode, np.ndarray]
    envelope: Mapping[Mode, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    h_range: tuple[float, float] = (50.0, 99.0)
    r2: Mapping[Mode, float] = field(default_factory=dict)

    def __post_init__(self):
        n = (self.degree + 1) * (self.degree + 2) // 2
        coef = {}
        for m, c in self.coef.items():
            c = np.asarray(c, dtype=float).copy()
            if c.shape != (n,):
                raise ValueError(f"mode {Mode.parse(m).name} needs {n} coefficients, got {c.shape}")
            c.setflags(write=False)
            coef[Mode.parse(m)] = c
        env = {}
        for m, (lo, hi) in self.envelope.items():
            lo = np.asarray(lo, dtype=float).copy()
            hi = np.asarray(hi, dtype=float).copy()
            lo.setflags(write=False)
            hi.setflags(write=False)
            env[Mode.parse(m)] = (lo, hi)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "envelope", env)
        object.__setattr__(self, "r2", {Mode.parse(m): float(v) for m, v in self.r2.items()})
        object.__setattr__(self, "h_range", (float(self.h_range[0]), float(self.h_range[1])))

    @classmethod
    def from_terms(cls, degree: int, terms: Mapping, **kw) -> "UpcModel":
        """Build from ``{mode: {(a, b): c_ab}}``; missing terms are zero."""
        idx = {ab: i for i, ab in enumerate(monomials(degree))}
        coef = {}
        for m, tm in terms.items():
            c = np.zeros(len(idx))
            for ab, val in tm.items():
                if ab not in idx:
                    raise ValueError(f"term {ab} exceeds degree {degree}")
                c[idx[ab]] = val
            coef[m] = c
        return cls(degree, coef, **kw)

    def dense(self, mode) -> np.ndarray:
        """``(d+1, d+1)`` table ``C[a, b]``; zero when the mode is absent."""
        C = np.zeros((self.degree + 1, self.degree + 1))
        c = self.coef.get(Mode.parse(mode))
        if c is not None:
            for (a, b), v in zip(monomials(self.degree), c):
                C[a, b] = v
        return C

    def term(self, mode, a: int, b: int) -> float:
        return float(self.dense(mode)[a, b])

    def envelope_degree(self) -> int:
        if not self.envelope:
            return 0
        return max(len(c) for pair in self.envelope.values() for c in pair) - 1

    def envelope_table(self) -> np.ndarray:
        """Rows turbine-min, turbine-max, pump-min, pump-max (ascending powers)."""
        e = self.envelope_degree()
        out = np.zeros((4, e + 1))
        for k, m in enumerate((Mode.TURBINE, Mode.PUMP)):
            if m in self.envelope:
                lo, hi = self.envelope[m]
                out[2 * k, :len(lo)] = lo
                out[2 * k + 1, :len(hi)] = hi
        return out

    def power_bounds(self, mode, h) -> tuple[np.ndarray, np.ndarray]:
        """Envelope ``(p_min(h), p_max(h))`` for an active mode."""
        m = _check_active(mode)
        if m not in self.envelope:
            raise ValueError(f"model has no envelope for mode {m.name}")
        lo, hi = self.envelope[m]
        return P.polyval(h, lo), P.polyval(h, hi)

    def _check_head(self, h):
        h = np.asarray(h, dtype=float)
        lo, hi = self.h_range
        if np.any(h < lo - _HEAD_TOL) or np.any(h > hi + _HEAD_TOL) or not np.all(np.isfinite(h)):
            raise DomainError(f"head outside model range [{lo}, {hi}]")
        return h

    def check_envelope(self, n: int = 201) -> None:
        """Raise if the envelope sign/order invariants fail on ``n`` heads."""
        hs = np.linspace(*self.h_range, n)
        if Mode.TURBINE in self.envelope:
            lo, hi = self.power_bounds(Mode.TURBINE, hs)
            if np.any(lo <= 0.0) or np.any(hi < lo):
                raise DomainError("turbine envelope must satisfy 0 < p_min <= p_max")
        if Mode.PUMP in self.envelope:
            lo, hi = self.power_bounds(Mode.PUMP, hs)
            if np.any(hi >= 0.0) or np.any(lo > hi):
                raise DomainError("pump envelope must satisfy p_min <= p_max < 0")


def upc_eval(model: UpcModel, mode, p, h):
    """Flow ``sum_ab c_ab p^a h^b`` for an active mode [m^3/s]."""
    m = _check_active(mode)
    h = model._check_head(h)
    return P.polyval2d(np.asarray(p, dtype=float), h, model.dense(m))[()]


def upc_grad(model: UpcModel, mode, p, h):
    """Analytic partial derivatives ``(dq/dp, dq/dh)``."""
    m = _check_active(mode)
    h = model._check_head(h)
    p = np.asarray(p, dtype=float)
    C = model.dense(m)
    qp = P.polyval2d(p, h, P.polyder(C, axis=0)) if model.degree > 0 else np.zeros_like(p + h)
    qh = P.polyval2d(p, h, P.polyder(C, axis=1)) if model.degree > 0 else np.zeros_like(p + h)
    return np.asarray(qp)[()], np.asarray(qh)[()]


def upc_hessian(model: UpcModel, mode, p, h):
    """Second partials ``(q_pp, q_ph, q_hh)``."""
    m = _check_active(mode)
    h = model._check_head(h)
    p = np.asarray(p, dtype=float)
    C = model.dense(m)
    out = []
    for ax in ((0, 0), (0, 1), (1, 1)):
        D = C
        for a in ax:
            D = P.polyder(D, axis=a) if D.shape[a] > 1 else np.zeros((1, 1))
        out.append(np.asarray(P.polyval2d(p, h, D))[()])
    return tuple(out)


@dataclass(frozen=True)
class UpcSamples:
    """Flat sample table with one row per ``(mode, p, h, q)`` observation."""

    mode: np.ndarray
    p: np.ndarray
    h: np.ndarray
    q: np.ndarray

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence]) -> "UpcSamples":
        rows = list(rows)
        if not rows:
            return cls(np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros(0))
        mode = np.array([int(Mode.parse(r[0])) for r in rows])
        arr = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
        return cls(mode, arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self):
        return len(self.q)

    def select(self, mode) -> "UpcSamples":
        k = self.mode == int(Mode.parse(mode))
        return UpcSamples(self.mode[k], self.p[k], self.h[k], self.q[k])


def _as_samples(samples) -> UpcSamples:
    return samples if isinstance(samples, UpcSamples) else UpcSamples.from_rows(samples)


def upc_fit(samples, degree: int = 5, envelope_degree: int = 2) -> UpcModel:
    """Least-squares UPC fit per active mode plus envelope polynomials.

    The design matrix is built on max-abs scaled variables and the solution is
    mapped back to raw coefficients, which keeps the degree-5 problem well
    conditioned.

    Raises
    ------
    FitError
        If a mode has fewer samples than coefficients or a rank-deficient design.
    """
    s = _as_samples(samples)
    terms = monomials(degree)
    n = len(terms)
    coef, env, r2 = {}, {}, {}
    h_lo, h_hi = np.inf, -np.inf
    for m in (Mode.TURBINE, Mode.PUMP):
        sm = s.select(m)
        if len(sm) == 0:
            continue
        if len(sm) < n:
            raise FitError(f"mode {m.name}: {len(sm)} samples for {n} coefficients")
        sp = float(np.max(np.abs(sm.p))) or 1.0
        sh = float(np.max(np.abs(sm.h))) or 1.0
        ps, hs = sm.p / sp, sm.h / sh
        A = np.column_stack([ps ** a * hs ** b for a, b in terms])
        sol, _, rank, sv = np.linalg.lstsq(A, sm.q, rcond=None)
        if rank < n or sv[-1] <= 1e-10 * sv[0]:
            raise FitError(f"mode {m.name}: rank-deficient design ({rank} of {n})")
        coef[m] = np.array([c / (sp ** a * sh ** b) for c, (a, b) in zip(sol, terms)])
        resid = sm.q - A @ sol
        ss_tot = float(np.sum((sm.q - sm.q.mean()) ** 2))
        r2[m] = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
        env[m] = _fit_envelope(sm, envelope_degree, m)
        h_lo, h_hi = min(h_lo, sm.h.min()), max(h_hi, sm.h.max())
    if not coef:
        raise FitError("no turbine or pump samples")
    return UpcModel(degree, coef, env, (float(h_lo), float(h_hi)), r2)


def _fit_envelope(sm: UpcSamples, deg: int, mode: Mode):
    heads = np.unique(sm.h)
    if len(heads) < deg + 1:
        raise FitError(f"mode {mode.name}: {len(heads)} distinct heads for envelope degree {deg}")
    lo = np.array([sm.p[sm.h == h].min() for h in heads])
    hi = np.array([sm.p[sm.h == h].max() for h in heads])
    scale = float(np.max(np.abs(heads)))
    out = []
    for y in (lo, hi):
        c = P.polyfit(heads / scale, y, deg)
        out.append(c / scale ** np.arange(deg + 1))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# synthetic laboratory data
# ---------------------------------------------------------------------------

def rated_power_limits(config: PlantConfig, mode, h):
    """Rated-flow power limits ``(p_min, p_max)`` of the synthetic unit [MW]."""
    m = _check_active(mode)
    h = np.asarray(h, dtype=float)
    rg = config.rho * config.g
    if m == Mode.TURBINE:
        q_hi = 15.0 * np.sqrt(h / 75.0)
        return config.eta_ref * rg * h * 0.3 * q_hi / 1e6, config.eta_ref * rg * h * q_hi / 1e6
    q_hi = 13.0 * np.sqrt(75.0 / h)
    big = rg * h * q_hi / (config.eta_ref * 1e6)
    return -big, -0.6 * big


def synth_efficiency(config: PlantConfig, mode, p, h):
    """Concave efficiency surface peaking at 0.93 mid-envelope."""
    lo, hi = rated_power_limits(config, mode, h)
    pc = 0.5 * (lo + hi)
    return 0.93 - 0.10 * ((np.asarray(p) - pc) / pc) ** 2


def synth_flow(config: PlantConfig, mode, p, h, eta=None):
    """Flow implied by power, head and efficiency (efficiency surface if ``eta`` is None)."""
    m = _check_active(mode)
    p = np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    e = synth_efficiency(config, m, p, h) if eta is None else eta
    rg = config.rho * config.g
    if m == Mode.TURBINE:
        return (p * 1e6 / (e * rg * h))[()]
    return (-np.abs(p) * 1e6 * e / (rg * h))[()]


def synth_upc_dataset(config: PlantConfig, n_p: int = 25, n_h: int = 25,
                      noise: float = 2e-4, seed: int = 0) -> UpcSamples:
    """Deterministic synthetic UPC samples on a head x power grid per mode.

    Relative Gaussian noise of size ``noise`` is applied to the flows.
    """
    if n_p < 2 or n_h < 2:
        raise ValueError("synthetic grid needs at least 2 points per axis")
    rng = np.random.default_rng(seed)
    heads = np.linspace(config.h_min, config.h_max, n_h)
    rows_m, rows_p, rows_h = [], [], []
    for m in (Mode.TURBINE, Mode.PUMP):
        for h in heads:
            lo, hi = rated_power_limits(config, m, h)
            ps = np.linspace(lo, hi, n_p)
            rows_m.append(np.full(n_p, int(m)))
            rows_p.append(ps)
            rows_h.append(np.full(n_p, h))
    mode = np.concatenate(rows_m)
    p = np.concatenate(rows_p)
    h = np.concatenate(rows_h)
    q = np.empty_like(p)
    for m in (Mode.TURBINE, Mode.PUMP):
        k = mode == int(m)
        q[k] = synth_flow(config, m, p[k], h[k])
    q = q * (1.0 + noise * rng.standard_normal(q.shape))
    return UpcSamples(mode, p, h, q)


def default_model(config: PlantConfig | None = None, degree: int = 5) -> UpcModel:
    """Degree-``degree`` fit on the default synthetic dataset."""
    config = config or PlantConfig()
    return upc_fit(synth_upc_dataset(config), degree)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_samples(samples: UpcSamples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "p_mw", "h_m", "q_m3s"])
        for m, p, h, q in zip(samples.mode, samples.p, samples.h, samples.q):
            w.writerow([Mode(int(m)).name.lower(), repr(float(p)), repr(float(h)), repr(float(q))])


def load_samples(path) -> UpcSamples:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["mode", "p_mw", "h_m", "q_m3s"]:
            raise ValueError(f"{path}: expected header mode,p_mw,h_m,q_m3s")
        rows = []
        for i, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{i}: expected 4 fields")
            try:
                rows.append((Mode.parse(row[0]), float(row[1]), float(row[2]), float(row[3])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{i}: {exc}") from exc
    return UpcSamples.from_rows(rows)


def model_to_dict(model: UpcModel) -> dict:
    return {
        "format": "uphes-upc",
        "version": 1,
        "degree": model.degree,
        "h_range": list(model.h_range),
        "coef": {m.name.lower(): [float(x) for x in c] for m, c in model.coef.items()},
        "envelope": {m.name.lower(): {"p_min": [float(x) for x in lo], "p_max": [float(x) for x in hi]}
                     for m, (lo, hi) in model.envelope.items()},
        "r2": {m.name.lower(): v for m, v in model.r2.items()},
    }


def model_from_dict(d: dict) -> UpcModel:
    if d.get("format") != "uphes-upc":
        raise ValueError("not a UPC model file")
    return UpcModel(
        int(d["degree"]),
        {Mode.parse(k): v for k, v in d["coef"].items()},
        {Mode.parse(k): (v["p_min"], v["p_max"]) for k, v in d["envelope"].items()},
        tuple(d["h_range"]),
        {Mode.parse(k): v for k, v in d.get("r2", {}).items()},
    )


def save_model(model: UpcModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> UpcModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

ROLES = ("warm_start", "refined", "simulated", "baseline")


@dataclass(frozen=True)
class Trajectory:
    """Hourly schedule with the state it induces.

    ``h[t]`` is the head at the start of hour ``t`` and ``v[t]`` the lower
    volume at the end of hour ``t``; the volume before hour 0 is the plant's
    ``v_init``.
    """

    p: np.ndarray
    q: np.ndarray
    h: np.ndarray
    v: np.ndarray
    mode: np.ndarray
    role: str = "simulated"

    def __post_init__(self):
        T = len(self.p)
        for name in ("p", "q", "h", "v"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (T,):
                raise ValueError(f"trajectory field {name} must have length {T}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        md = np.array(self.mode, dtype=np.int64)
        if md.shape != (T,) or np.any((md < 0) | (md > 2)):
            raise ValueError("trajectory modes must be 0 (idle), 1 (turbine) or 2 (pump)")
        md.setflags(write=False)
        object.__setattr__(self, "mode", md)
        if self.role not in ROLES:
            raise ValueError(f"unknown trajectory role {self.role!r}")

    @property
    def T(self) -> int:
        return len(self.p)

    def validate(self) -> None:
        """Raise if mode tags and power/flow signs disagree."""
        idle = self.mode == Mode.IDLE
        if np.any(self.p[idle] != 0.0) or np.any(self.q[idle] != 0.0):
            raise ValueError("idle hours must have p = q = 0")
        if np.any(self.p[self.mode == Mode.TURBINE] <= 0.0):
            raise ValueError("turbine hours need p > 0")
        if np.any(self.p[self.mode == Mode.PUMP] >= 0.0):
            raise ValueError("pump hours need p < 0")

    def with_role(self, role: str) -> "Trajectory":
        return dataclasses.replace(self, role=role)


def modes_from_power(p, eps: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.where(np.abs(p) < eps, 0, np.where(p > 0.0, 1, 2)).astype(np.int64)
