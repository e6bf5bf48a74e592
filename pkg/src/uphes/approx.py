"""Affine, piecewise-bilinear and local Taylor surrogates of the plant physics.

Three levels of approximation are provided:

* a single affine map per relation fitted over the whole operating domain,
* a per-mode grid of UPC samples interpolated bilinearly inside each cell, which
  is the continuous function an SOS2 mixed-integer encoding selects,
* first-order expansions around a trajectory, rebuilt at every refinement step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DomainError, FitError
from .plant import (Mode, PlantConfig, Trajectory, UpcModel, gross_head, upc_eval,
                    volume_from_head, volume_head_derivatives)

IDLE_EPS = 1e-6
ACTIVE = (Mode.TURBINE, Mode.PUMP)


def _lstsq(A, y, what):
    if A.shape[0] < A.shape[1]:
        raise FitError(f"{what}: {A.shape[0]} samples for {A.shape[1]} coefficients")
    scale = np.max(np.abs(A), axis=0)
    scale[scale == 0.0] = 1.0
    sol, _, rank, sv = np.linalg.lstsq(A / scale, y, rcond=None)
    if rank < A.shape[1] or sv[-1] <= 1e-12 * sv[0]:
        raise FitError(f"{what}: degenerate sampling")
    return sol / scale


# ---------------------------------------------------------------------------
# global affine model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalLinearModel:
    """Affine flow, power-bound and head maps.

    ``alpha[m] @ [p, h, 1]`` is the flow, ``beta_min[m] @ [h, 1]`` and
    ``beta_max[m] @ [h, 1]`` the power bounds, ``delta @ [v, 1]`` the head.
    """

    alpha: dict
    beta_min: dict
    beta_max: dict
    delta: np.ndarray

    def flow(self, mode, p, h):
        a = self.alpha[Mode.parse(mode)]
        return a[0] * np.asarray(p) + a[1] * np.asarray(h) + a[2]

    def power_bounds(self, mode, h):
        m = Mode.parse(mode)
        h = np.asarray(h, dtype=float)
        return (self.beta_min[m][0] * h + self.beta_min[m][1],
                self.beta_max[m][0] * h + self.beta_max[m][1])

    def head(self, v):
        return self.delta[0] * np.asarray(v) + self.delta[1]

    def volume(self, h):
        """Volume implied by the affine head map at head ``h``."""
        return (np.asarray(h) - self.delta[1]) / self.delta[0]


def fit_global(model: UpcModel, config: PlantConfig, n_h: int = 30, n_p: int = 30,
               n_v: int = 30) -> GlobalLinearModel:
    """Least-squares affine fits over uniform grids of the operating domain."""
    if min(n_h, n_p, n_v) < 3:
        raise FitError("global fits need at least 3 samples per axis")
    hs = np.linspace(config.h_min, config.h_max, n_h)
    alpha, bmin, bmax = {}, {}, {}
    for m in ACTIVE:
        if m not in model.coef:
            continue
        lo, hi = model.power_bounds(m, hs)
        P_ = np.linspace(lo, hi, n_p, axis=1)
        H_ = np.repeat(hs[:, None], n_p, axis=1)
        q = upc_eval(model, m, P_, H_).ravel()
        A = np.column_stack([P_.ravel(), H_.ravel(), np.ones(P_.size)])
        alpha[m] = _lstsq(A, q, f"flow fit for {m.name}")
        B = np.column_stack([hs, np.ones(n_h)])
        bmin[m] = _lstsq(B, lo, f"p_min fit for {m.name}")
        bmax[m] = _lstsq(B, hi, f"p_max fit for {m.name}")
    vs = np.linspace(config.v_min, config.v_max, n_v)
    hv = np.array([gross_head(v, config) for v in vs])
    delta = _lstsq(np.column_stack([vs, np.ones(n_v)]), hv, "head fit")
    return GlobalLinearModel(alpha, bmin, bmax, delta)


# ---------------------------------------------------------------------------
# piecewise-bilinear grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sos2Grid:
    """Head knots with per-mode power/flow tables and paired volumes."""

    h: np.ndarray
    v: np.ndarray
    p: dict
    q: dict

    @property
    def n_h(self) -> int:
        return len(self.h)

    def n_p(self, mode) -> int:
        return self.p[Mode.parse(mode)].shape[1]

    def weight_count(self, horizon: int = 24) -> int:
        """Number of power/flow interpolation weights over the horizon."""
        return horizon * sum(self.n_h * self.n_p(m) for m in self.p)


def build_sos2_grid(model: UpcModel, config: PlantConfig, n_h: int, n_p) -> Sos2Grid:
    """Uniform head knots and envelope-spanning power knots per mode.

    ``n_p`` is an int or a ``{mode: int}`` mapping.
    """
    if not isinstance(n_p, dict):
        n_p = {m: int(n_p) for m in ACTIVE}
    n_p = {Mode.parse(k): v for k, v in n_p.items()}
    if n_h < 2 or any(v < 2 for v in n_p.values()):
        raise ValueError("grid needs at least 2 knots per axis")
    hs = np.linspace(config.h_min, config.h_max, n_h)
    vs = np.array([volume_from_head(h, config) for h in hs])
    P_, Q_ = {}, {}
    for m in ACTIVE:
        if m not in model.coef:
            continue
        lo, hi = model.power_bounds(m, hs)
        pk = np.linspace(lo, hi, n_p[m], axis=1)
        P_[m] = pk
        Q_[m] = np.asarray(upc_eval(model, m, pk, np.repeat(hs[:, None], n_p[m], axis=1)))
    return Sos2Grid(hs, vs, P_, Q_)


def _locate(x, knots_n, frac):
    """Cell index and local coordinate of ``frac`` in ``[0, n-1]``."""
    s = frac * (knots_n - 1)
    r = round(s)
    if abs(s - r) < 1e-9:
        s = float(r)
    i = min(int(np.floor(s)), knots_n - 2)
    return i, s - i


HULL_SLACK = 1e-2


def sos2_weights(grid: Sos2Grid, h: float, p: float, mode, slack: float = HULL_SLACK):
    """Interpolation weights ``(i, theta, j, phi)`` for ``(h, p)``.

    Rows ``i`` and ``i+1`` receive weights ``1-theta`` and ``theta``; inside each
    row the two adjacent power knots share the row weight by ``phi``.  Between
    head knots the grid's power envelope is the chord of the true, curved one,
    so a point on the true envelope may sit just outside the hull; powers within
    ``slack`` envelope widths of the hull are extrapolated from the edge cell.
    """
    m = Mode.parse(mode)
    hs = grid.h
    if not hs[0] - 1e-9 <= h <= hs[-1] + 1e-9:
        raise DomainError(f"head {h} outside grid [{hs[0]}, {hs[-1]}]")
    i, th = _locate(h, len(hs), (h - hs[0]) / (hs[-1] - hs[0]))
    pk = grid.p[m]
    lo = (1.0 - th) * pk[i, 0] + th * pk[i + 1, 0]
    hi = (1.0 - th) * pk[i, -1] + th * pk[i + 1, -1]
    sig = (p - lo) / (hi - lo)
    if not -slack - 1e-9 <= sig <= 1.0 + slack + 1e-9:
        raise DomainError(f"power {p} outside grid envelope at head {h}")
    n = pk.shape[1]
    if 0.0 <= sig <= 1.0:
        j, ph = _locate(p, n, sig)
    else:
        j = 0 if sig < 0.0 else n - 2
        ph = sig * (n - 1) - j
    return i, th, j, ph


def sos2_interpolate(grid: Sos2Grid, h: float, p: float, mode,
                     slack: float = HULL_SLACK) -> float:
    """Bilinear flow on the cell containing ``(h, p)``."""
    m = Mode.parse(mode)
    i, th, j, ph = sos2_weights(grid, h, p, m, slack)
    q = grid.q[m]
    return float((1.0 - th) * ((1.0 - ph) * q[i, j] + ph * q[i, j + 1])
                 + th * ((1.0 - ph) * q[i + 1, j] + ph * q[i + 1, j + 1]))


def sos2_volume(grid: Sos2Grid, h: float) -> float:
    """Piecewise-linear volume at head ``h`` through the knot pairs."""
    hs = grid.h
    if not hs[0] - 1e-9 <= h <= hs[-1] + 1e-9:
        raise DomainError(f"head {h} outside grid")
    i, th = _locate(h, len(hs), (h - hs[0]) / (hs[-1] - hs[0]))
    return float((1.0 - th) * grid.v[i] + th * grid.v[i + 1])


# ---------------------------------------------------------------------------
# local Taylor expansions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalLinearization:
    """Per-hour affine flow and volume maps around an expansion trajectory.

    ``xi_q[t] @ [p, h, 1]`` approximates the flow in hour ``t`` and
    ``xi_v[t] @ [h, 1]`` the lower volume at which the head equals ``h``.
    ``dxi_q[t, k, :]`` holds the derivatives of ``xi_q[t, k]`` with respect to
    the expansion point ``(p_hat, h_hat)`` and ``dxi_v[t]`` those of ``xi_v[t]``
    with respect to ``h_hat``.
    """

    xi_q: np.ndarray
    xi_v: np.ndarray
    point: Trajectory
    dxi_q: np.ndarray
    dxi_v: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return np.any(self.xi_q != 0.0, axis=1)


def _derivative_tables(C: np.ndarray) -> list:
    """Coefficient tables of ``q`` and its first and second partials."""
    def der(D, a):
        return P.polyder(D, axis=a) if D.shape[a] > 1 else np.zeros((1, 1))
    Cp, Ch = der(C, 0), der(C, 1)
    return [C, Cp, Ch, der(Cp, 0), der(Cp, 1), der(Ch, 1)]


def local_linearize(model: UpcModel, config: PlantConfig, traj: Trajectory,
                    eps: float = IDLE_EPS) -> LocalLinearization:
    """First-order expansions of the UPC and volume-head relation at ``traj``."""
    T = traj.T
    xi_q = np.zeros((T, 3))
    xi_v = np.zeros((T, 2))
    dxi_q = np.zeros((T, 3, 2))
    dxi_v = np.zeros((T, 2))
    mode = np.asarray(traj.mode)
    if np.any((mode < 0) | (mode > 2)):
        raise ValueError(f"invalid mode tag at hour {int(np.flatnonzero((mode < 0) | (mode > 2))[0])}")
    for t in range(T):
        h = float(traj.h[t])
        guess = config.v_init if t == 0 else float(traj.v[t - 1])
        v, g1, g2 = volume_head_derivatives(h, config, guess)
        xi_v[t] = (g1, v - g1 * h)
        dxi_v[t] = (g2, -g2 * h)
    p_all = np.asarray(traj.p, dtype=float)
    h_all = np.asarray(traj.h, dtype=float)
    on = np.abs(p_all) >= eps
    sign = np.where(p_all > 0.0, int(Mode.TURBINE), int(Mode.PUMP))
    bad = np.flatnonzero(on & (mode != sign))
    if bad.size:
        raise ValueError(f"hour {int(bad[0])}: mode tag {int(mode[bad[0]])} disagrees with power sign")
    for m in ACTIVE:
        idx = np.flatnonzero(on & (sign == int(m)))
        if idx.size == 0:
            continue
        p, h = p_all[idx], model._check_head(h_all[idx])
        tab = _derivative_tables(model.dense(m))
        q, qp, qh, qpp, qph, qhh = (np.atleast_1d(P.polyval2d(p, h, D)) for D in tab)
        xi_q[idx] = np.column_stack([qp, qh, q - qp * p - qh * h])
        dxi_q[idx, 0] = np.column_stack([qpp, qph])
        dxi_q[idx, 1] = np.column_stack([qph, qhh])
        dxi_q[idx, 2] = np.column_stack([-qpp * p - qph * h, -qph * p - qhh * h])
    return LocalLinearization(xi_q, xi_v, traj, dxi_q, dxi_v)


# ---------------------------------------------------------------------------
# error reports
# ---------------------------------------------------------------------------

def error_metrics(y_true, y_pred, floor: float = 1e-9) -> dict:
    """Mean, max and mean-absolute percentage errors plus R^2."""
    y = np.asarray(y_true, dtype=float)
    yh = np.asarray(y_pred, dtype=float)
    if y.size < 2 or y.shape != yh.shape:
        raise ValueError("need at least 2 matching evaluation points")
    e = np.abs(yh - y)
    ay = np.maximum(np.abs(y), floor)
    sst = float(np.sum((y - y.mean()) ** 2))
    return {
        "mean_pct": 100.0 * float(e.mean()) / max(float(np.abs(y).mean()), floor),
        "max_pct": 100.0 * float(np.max(e / ay)),
        "mape_pct": 100.0 * float(np.mean(e / ay)),
        "r2": 1.0 - float(np.sum(e ** 2)) / sst if sst > 0 else float(np.sum(e ** 2) == 0.0),
    }


@dataclass(frozen=True)
class EvalPoints:
    """Operating points ``(mode, p, h)`` with the true lower volume at each head."""

    mode: np.ndarray
    p: np.ndarray
    h: np.ndarray
    v: np.ndarray

    def __len__(self):
        return len(self.p)


def points_from_trajectories(trajs, config: PlantConfig, limit: int | None = None) -> EvalPoints:
    """Active hours of simulated trajectories as evaluation points.

    The volume paired with each point is the one in force at the start of the
    hour, so ``h = gross_head(v)`` holds exactly.
    """
    md, p, h, v = [], [], [], []
    for tr in trajs:
        v_prev = np.concatenate([[config.v_init], tr.v[:-1]])
        for t in range(tr.T):
            if tr.mode[t] != 0:
                md.append(int(tr.mode[t]))
                p.append(tr.p[t])
                h.append(tr.h[t])
                v.append(v_prev[t])
    if limit is not None:
        md, p, h, v = md[:limit], p[:limit], h[:limit], v[:limit]
    return EvalPoints(np.array(md, dtype=np.int64), np.array(p), np.array(h), np.array(v))


def approx_error_report(model: UpcModel, config: PlantConfig, approx, points: EvalPoints) -> dict:
    """Error metrics of ``approx`` against the true UPC and volume-head relation.

    Returns ``{"f_upc": metrics, "f_vol": metrics}``.  Volumes are compared in
    volume space: the surrogate's volume at the true head versus the true
    volume.
    """
    if len(points) < 2:
        raise ValueError("need at least 2 evaluation points")
    q_true = np.array([float(upc_eval(model, m, p, h))
                       for m, p, h in zip(points.mode, points.p, points.h)])
    if isinstance(approx, GlobalLinearModel):
        q_hat = np.array([float(approx.flow(m, p, h))
                          for m, p, h in zip(points.mode, points.p, points.h)])
        v_hat = approx.volume(points.h)
    elif isinstance(approx, Sos2Grid):
        q_hat = np.array([sos2_interpolate(approx, h, p, m)
                          for m, p, h in zip(points.mode, points.p, points.h)])
        v_hat = np.array([sos2_volume(approx, h) for h in points.h])
    elif approx is None or approx == "truth":
        q_hat, v_hat = q_true.copy(), points.v.copy()
    else:
        raise TypeError(f"unsupported approximation {type(approx).__name__}")
    return {"f_upc": error_metrics(q_true, q_hat), "f_vol": error_metrics(points.v, v_hat)}


REPORT_COLUMNS = ("function", "method", "mean_pct", "max_pct", "mape_pct", "r2")


def write_error_report(rows, path) -> None:
    """Rows are ``(function, method, metrics)`` triples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for fn, method, met in rows:
            w.writerow([fn, method] + [f"{met[k]:.6g}" for k in REPORT_COLUMNS[2:]])
