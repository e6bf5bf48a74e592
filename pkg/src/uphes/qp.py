"""Penalized convex QP refinement with implicit differentiation.

Around an expansion trajectory the UPC and the volume-head relation are
replaced by their local affine maps, the operating pattern is frozen, and the
schedule is improved by a QP whose quadratic deviation penalties act as a
trust region.  The QP is solved by a dense primal-dual interior-point method,
polished on its active set, and differentiated through the KKT system.

Variables are stacked as ``x = [p, q, h, v]`` (each of length ``T``), where
``h[t]`` is the head at the start of hour ``t`` and ``v[t]`` the volume at its
end.  Internally the problem is stated as a minimization

    min 1/2 x'Qx + c'x   s.t.  A x = b,  G x <= g

and reported in its maximization form.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .approx import GlobalLinearModel, LocalLinearization, local_linearize
from .errors import BuildError, SolverError
from .plant import Mode, PlantConfig, Trajectory, UpcModel, gross_head

W_LO = 1e-3
W_HI = 1e3


@dataclass(frozen=True)
class PenaltyWeights:
    """Per-hour trust-region weights with the annealing schedule.

    Iteration ``k`` of the refinement uses ``gamma**k`` times these weights.
    """

    w_p: np.ndarray
    w_q: np.ndarray
    w_h: np.ndarray
    gamma: float = 2.0
    K: int = 3
    w_lo: float = W_LO
    w_hi: float = W_HI

    def __post_init__(self):
        arrs = [np.array(getattr(self, k), dtype=float) for k in ("w_p", "w_q", "w_h")]
        if not arrs[0].shape == arrs[1].shape == arrs[2].shape or arrs[0].ndim != 1:
            raise ValueError("weight vectors must be 1-D with equal length")
        for k, a in zip(("w_p", "w_q", "w_h"), arrs):
            if np.any(a < self.w_lo * (1 - 1e-12)) or np.any(a > self.w_hi * (1 + 1e-12)):
                raise ValueError(f"{k} outside [{self.w_lo}, {self.w_hi}]")
            a.setflags(write=False)
            object.__setattr__(self, k, a)
        if not self.gamma > 1.0:
            raise ValueError("growth factor must exceed 1")
        if int(self.K) < 1:
            raise ValueError("iteration count must be at least 1")

    @classmethod
    def constant(cls, T: int, value: float | None = None, **kw) -> "PenaltyWeights":
        """Same weight everywhere; defaults to the geometric midpoint of the bounds."""
        lo, hi = kw.get("w_lo", W_LO), kw.get("w_hi", W_HI)
        value = float(np.sqrt(lo * hi)) if value is None else float(value)
        a = np.full(T, value)
        return cls(a, a, a, **kw)

    @property
    def T(self) -> int:
        return len(self.w_p)

    def scaled(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.gamma ** k
        return s * self.w_p, s * self.w_q, s * self.w_h

    def stack(self) -> np.ndarray:
        return np.vstack([self.w_p, self.w_q, self.w_h])


@dataclass
class QpInstance:
    """Dense QP data plus what is needed to differentiate it."""

    T: int
    Qd: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    g: np.ndarray
    const: float
    eq_rows: list
    in_rows: list
    active: np.ndarray
    w: tuple
    center: tuple
    lin: LocalLinearization | None = None
    index: dict = field(default_factory=dict)
    scale: np.ndarray | None = None

    @property
    def n(self) -> int:
        return 4 * self.T

    def idx(self, var: str, t: int) -> int:
        return "pqhv".index(var) * self.T + t

    def objective(self, x) -> float:
        """Maximization-form objective at ``x``."""
        x = np.asarray(x, dtype=float)
        return -(0.5 * float(x @ (self.Qd * x)) + float(self.c @ x)) - self.const

    def dump(self) -> str:
        """Human-readable listing of objective and constraint rows."""
        names = [f"{v}[{t}]" for v in "pqhv" for t in range(self.T)]

        def row(coefs):
            return " ".join(f"{c:+.6g}*{names[j]}" for j, c in enumerate(coefs) if c != 0.0)

        out = ["minimize 1/2 x'Qx + c'x"]
        out += [f"  Q[{names[j]}] = {self.Qd[j]:.6g}  c = {self.c[j]:.6g}" for j in range(self.n)]
        out.append("subject to")
        for r, lab in enumerate(self.eq_rows):
            out.append(f"  {lab}: {row(self.A[r])} = {self.b[r]:.10g}")
        for r, lab in enumerate(self.in_rows):
            out.append(f"  {lab}: {row(self.G[r])} <= {self.g[r]:.10g}")
        return "\n".join(out) + "\n"


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str
    objective: float
    iterations: int
    kkt: dict
    active: np.ndarray
    degenerate: bool = False
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def split(self, T: int):
        return self.x[:T], self.x[T:2 * T], self.x[2 * T:3 * T], self.x[3 * T:]


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def build_penalized_qp(prices, x_hat: Trajectory, lin: LocalLinearization, w,
                       config: PlantConfig, glob: GlobalLinearModel,
                       h_first: float | None = None) -> QpInstance:
    """Assemble the trust-region QP around ``x_hat``.

    Parameters
    ----------
    prices : array (T,)
        Day-ahead prices per MWh.
    x_hat : Trajectory
        Expansion point; its operating pattern is locked.
    lin : LocalLinearization
        Affine maps built at ``x_hat``.
    w : PenaltyWeights or tuple of three (T,) arrays
        Weights for the power, flow and head deviations.
    glob : GlobalLinearModel
        Supplies the affine power envelopes of each mode.
    h_first : float, optional
        Head at the start of the horizon; defaults to ``gross_head(v_init)``.
    """
    lam = np.asarray(prices, dtype=float)
    T = x_hat.T
    if isinstance(w, PenaltyWeights):
        w_p, w_q, w_h = w.w_p, w.w_q, w.w_h
    else:
        w_p, w_q, w_h = (np.asarray(a, dtype=float) for a in w)
    for a in (lam, w_p, w_q, w_h):
        if a.shape != (T,):
            raise BuildError(f"expected length-{T} vectors, got {a.shape}")
    if lin.xi_q.shape != (T, 3) or lin.xi_v.shape != (T, 2):
        raise BuildError("linearization does not match the horizon")
    if np.any(w_p < 0) or np.any(w_q < 0) or np.any(w_h < 0):
        raise BuildError("weights must be nonnegative")
    n = 4 * T
    ip, iq, ih, iv = (np.arange(T) + k * T for k in range(4))
    dt_h = config.dt_hours
    p_hat, q_hat, h_hat = x_hat.p, x_hat.q, x_hat.h
    active = np.abs(p_hat) >= config.idle_eps
    mode = np.where(active, np.where(p_hat > 0, 1, 2), 0)
    if np.any((x_hat.mode != 0) != active):
        raise BuildError("trajectory mode tags disagree with its power pattern")

    Qd = np.zeros(n)
    c = np.zeros(n)
    Qd[ip] = 2.0 * (dt_h * config.c_op + w_p)
    Qd[iq] = 2.0 * w_q
    Qd[ih] = 2.0 * w_h
    c[ip] = -(dt_h * lam + 2.0 * w_p * p_hat)
    c[iq] = -2.0 * w_q * q_hat
    c[ih] = -2.0 * w_h * h_hat
    const = float(np.sum(w_p * p_hat ** 2 + w_q * q_hat ** 2 + w_h * h_hat ** 2))

    n_act = int(active.sum())
    m_eq = 1 + (T - 1) + T + n_act + 2 * (T - n_act)
    A = np.zeros((m_eq, n))
    b = np.zeros(m_eq)
    rows = []
    r = 0
    h0 = gross_head(config.v_init, config) if h_first is None else float(h_first)
    A[r, ih[0]] = 1.0
    b[r] = h0
    rows.append(("h0", 0))
    r += 1
    for t in range(1, T):
        A[r, iv[t - 1]] = 1.0
        A[r, ih[t]] = -lin.xi_v[t, 0]
        b[r] = lin.xi_v[t, 1]
        rows.append(("vh", t))
        r += 1
    for t in range(T):
        A[r, iv[t]] = 1.0
        A[r, iq[t]] = -config.dt
        if t > 0:
            A[r, iv[t - 1]] = -1.0
        else:
            b[r] = config.v_init
        rows.append(("dyn", t))
        r += 1
    for t in range(T):
        if active[t]:
            A[r, iq[t]] = 1.0
            A[r, ip[t]] = -lin.xi_q[t, 0]
            A[r, ih[t]] = -lin.xi_q[t, 1]
            b[r] = lin.xi_q[t, 2]
            rows.append(("flow", t))
            r += 1
        else:
            A[r, ip[t]] = 1.0
            rows.append(("idle_p", t))
            r += 1
            A[r, iq[t]] = 1.0
            rows.append(("idle_q", t))
            r += 1

    G_rows, g_vals, labels = [], [], []

    def add(coefs, rhs, lab):
        row = np.zeros(n)
        for j, a in coefs:
            row[j] += a
        G_rows.append(row)
        g_vals.append(rhs)
        labels.append(lab)

    for t in range(1, T):
        add([(ih[t], 1.0)], config.h_max, ("h_max", t))
        add([(ih[t], -1.0)], -config.h_min, ("h_min", t))
    add([(iv[T - 1], 1.0)], min(config.v_target, config.v_max), ("v_target", T - 1))
    add([(iv[T - 1], -1.0)], -config.v_min, ("v_min", T - 1))
    for t in range(T):
        if not active[t]:
            continue
        m = Mode(int(mode[t]))
        if m not in glob.beta_min:
            raise BuildError(f"global model has no envelope for {m.name}")
        bl, bh = glob.beta_min[m], glob.beta_max[m]
        add([(ip[t], -1.0), (ih[t], bl[0])], -bl[1], ("p_min", t))
        add([(ip[t], 1.0), (ih[t], -bh[0])], bh[1], ("p_max", t))
    G = np.array(G_rows) if G_rows else np.zeros((0, n))
    g = np.array(g_vals)
    index = {"p": ip, "q": iq, "h": ih, "v": iv}
    return QpInstance(T, Qd, c, A, b, G, g, const, rows, labels, active,
                      (np.array(w_p), np.array(w_q), np.array(w_h)),
                      (p_hat.copy(), q_hat.copy(), h_hat.copy()), lin, index,
                      _var_scale(T, config))


# ---------------------------------------------------------------------------
# interior-point solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QpTolerances:
    solve: float = 1e-8
    accept: float = 1e-6
    max_iter: int = 80


def _var_scale(T: int, config: PlantConfig) -> np.ndarray:
    return np.concatenate([np.full(T, 10.0), np.full(T, 10.0),
                           np.full(T, config.h_max), np.full(T, config.v_total)])


def _ipm(Qd, c, A, b, G, g, tol, max_iter):
    n, me, mi = len(c), A.shape[0], G.shape[0]
    reg = 1e-11
    # starting point: equality-constrained least-change solve
    K0 = np.block([[np.diag(Qd + 1.0), A.T], [A, -reg * np.eye(me)]])
    sol0 = np.linalg.solve(K0, np.concatenate([-c, b]))
    x = sol0[:n]
    y = np.zeros(me)
    s = np.maximum(g - G @ x, 1.0)
    z = np.ones(mi)
    nb = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(g), initial=0.0))
    nc = 1.0 + np.max(np.abs(c), initial=0.0)
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        rd = Qd * x + c + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - g
        mu = float(s @ z) / mi if mi else 0.0
        if (np.max(np.abs(rd)) <= tol * nc and np.max(np.abs(rp), initial=0.0) <= tol * nb
                and np.max(np.abs(ri), initial=0.0) <= tol * nb and mu <= tol):
            status = "optimal"
            break
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))) or np.max(np.abs(x)) > 1e12:
            status = "diverged"
            break
        Wd = z / s
        KK = np.block([[np.diag(Qd) + (G.T * Wd) @ G + reg * np.eye(n), A.T],
                       [A, -reg * np.eye(me)]])
        try:
            lu = sla.lu_factor(KK, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            status = "singular"
            break

        def direction(rc):
            rhs_x = -rd - G.T @ ((rc + z * ri) / s)
            sol = sla.lu_solve(lu, np.concatenate([rhs_x, -rp]), check_finite=False)
            dx, dy = sol[:n], sol[n:]
            dz = (rc + z * ri + z * (G @ dx)) / s
            ds = -ri - G @ dx
            return dx, dy, dz, ds

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0

        dx, dy, dz, ds = direction(-s * z)
        a_aff = min(max_step(s, ds), max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi if mi else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, dz, ds = direction(-s * z + sigma * mu - ds * dz)
        a = min(1.0, 0.99 * min(max_step(s, ds), max_step(z, dz)))
        x = x + a * dx
        y = y + a * dy
        z = z + a * dz
        s = s + a * ds
        if a < 1e-12:
            status = "stalled"
            break
    return x, y, z, s, status, it


def _independent_active(A, G, act, tol: float = 1e-9) -> np.ndarray:
    """Drop active rows that depend on the equalities or on other active rows.

    Dependent rows leave the primal solution unchanged but make the KKT
    matrix singular.  Rows are selected by pivoted QR of the active rows
    projected off the equality span, so the choice is deterministic.
    """
    idx = np.flatnonzero(act)
    if idx.size == 0:
        return act
    R = G[idx]
    if A.size:
        Qa, Ra, _ = sla.qr(A.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(Ra))
        Qa = Qa[:, :int(np.sum(d > tol * max(d.max(initial=0.0), 1.0)))]
        R = R - (R @ Qa) @ Qa.T
    _, Rr, piv = sla.qr(R.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rr))
    rank = int(np.sum(d > tol))
    out = np.zeros_like(act)
    out[idx[np.sort(piv[:rank])]] = True
    return out


def _polish(Qd, c, A, b, G, g, act):
    """Solve the equality system of the estimated active set exactly."""
    Ga = G[act]
    n, me, ma = len(c), A.shape[0], int(act.sum())
    M = np.block([[np.diag(Qd), A.T, Ga.T],
                  [A, np.zeros((me, me + ma))],
                  [Ga, np.zeros((ma, me + ma))]])
    rhs = np.concatenate([-c, b, g[act]])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    z = np.zeros(G.shape[0])
    z[act] = sol[n + me:]
    return sol[:n], sol[n:n + me], z


def _residuals(Qd, c, A, b, G, g, x, y, z) -> dict:
    rd = Qd * x + c + A.T @ y + G.T @ z
    rp = A @ x - b
    slack = g - G @ x
    scale_d = 1.0 + max(np.max(np.abs(c), initial=0.0), np.max(np.abs(Qd * x), initial=0.0))
    # each row against the size of its own terms, so rows in m3 do not mask rows in MW
    row_a = 1.0 + np.abs(b) + np.max(np.abs(A * x), axis=1, initial=0.0)
    row_g = 1.0 + np.abs(g) + np.max(np.abs(G * x), axis=1, initial=0.0)
    return {
        "stationarity": float(np.max(np.abs(rd), initial=0.0)) / scale_d,
        "primal": max(float(np.max(np.abs(rp) / row_a, initial=0.0)),
                      float(np.max(-slack / row_g, initial=0.0))),
        "dual": max(float(np.max(-z, initial=0.0)), 0.0),
        "complementarity": float(np.max(np.abs(z * slack), initial=0.0)) / scale_d,
    }


def _confirm_infeasible(A, b, G, g) -> bool:
    n = A.shape[1] if A.size else G.shape[1]
    res = linprog(np.zeros(n), A_ub=G if G.size else None, b_ub=g if G.size else None,
                  A_eq=A if A.size else None, b_eq=b if A.size else None,
                  bounds=[(None, None)] * n, method="highs")
    return res.status == 2


def solve_dense(Qd, c, A, b, G, g, scale=None, tol: QpTolerances | None = None):
    """Solve ``min 1/2 x'diag(Qd)x + c'x  s.t. Ax = b, Gx <= g``.

    Variables are scaled by ``scale``, rows by their largest coefficient and
    the objective by its largest coefficient before the interior-point run.
    The result is polished on the estimated active set when that yields a
    point satisfying the acceptance tolerance.

    Returns
    -------
    x, y, z : ndarray
        Primal point and multipliers of the equality and inequality rows.
    status : str
        ``optimal``, ``infeasible`` or ``max_iter``.
    info : dict
        ``iterations``, ``kkt`` residuals, ``active`` mask, ``polished``.
    """
    tol = tol or QpTolerances()
    n = len(c)
    A = A.reshape(-1, n)
    G = G.reshape(-1, n)
    D = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    ra = np.max(np.abs(A * D), axis=1) if A.size else np.ones(0)
    ra[ra == 0] = 1.0
    rg = np.max(np.abs(G * D), axis=1) if G.size else np.ones(0)
    rg[rg == 0] = 1.0
    As = (A * D) / ra[:, None]
    Gs = (G * D) / rg[:, None]
    Qs = Qd * D * D
    cs = c * D
    sig = 1.0 / max(np.max(np.abs(Qs), initial=0.0), np.max(np.abs(cs), initial=0.0), 1e-12)
    # the scaled duals can be small enough that a converged barrier still leaves
    # slacks far from zero; tighten until the active set can be read off
    polished = False
    it = 0
    for tight in (1.0, 1e-3, 1e-6):
        xs, ys, zs, ss, status, k = _ipm(Qs * sig, cs * sig, As, b / ra, Gs, g / rg,
                                         tol.solve * tight, tol.max_iter)
        it += k
        x = xs * D
        y = ys / ra / sig
        z = zs / rg / sig
        active = _independent_active(As, Gs, zs > ss)
        if status not in ("optimal", "max_iter", "stalled") or not np.all(np.isfinite(xs)):
            break
        pol = _polish(Qd, c, A, b, G, g, active)
        if pol is not None:
            kk = _residuals(Qd, c, A, b, G, g, *pol)
            if max(kk.values()) <= tol.accept:
                x, y, z = pol
                polished = True
                status = "optimal"
                break
        if status != "optimal":
            break
    kkt = _residuals(Qd, c, A, b, G, g, x, y, z)
    if status != "optimal":
        if np.all(np.isfinite(x)) and max(kkt.values()) <= tol.accept:
            status = "optimal"
        elif _confirm_infeasible(A, b, G, g):
            status = "infeasible"
        else:
            status = "max_iter"
    return x, y, z, status, {"iterations": it, "kkt": kkt, "active": active,
                             "polished": polished}


def solve_qp(qp: QpInstance, tol: QpTolerances | None = None) -> QpSolution:
    """Interior-point solve followed by active-set polishing.

    Returns a solution with ``status`` one of ``optimal``, ``infeasible`` or
    ``max_iter`` (best iterate).  Deterministic for fixed inputs.
    """
    x, y, z, status, info = solve_dense(qp.Qd, qp.c, qp.A, qp.b, qp.G, qp.g, qp.scale, tol)
    active = info["active"]
    degenerate = False
    if status == "optimal" and np.any(active):
        zscale = 1.0 + np.max(np.abs(z))
        degenerate = bool(np.any(z[active] <= 1e-9 * zscale))
    return QpSolution(x, y, z, status, qp.objective(x), info["iterations"], info["kkt"],
                      active, degenerate, info["polished"])


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def _kkt_matrix(qp: QpInstance, sol: QpSolution):
    act = sol.active
    Ga = qp.G[act]
    me, ma = qp.A.shape[0], int(act.sum())
    M = np.block([[np.diag(qp.Qd), qp.A.T, Ga.T],
                  [qp.A, np.zeros((me, me + ma))],
                  [Ga, np.zeros((ma, me + ma))]])
    return M


def _kkt_solve(M, rhs, degenerate):
    if not degenerate:
        try:
            out = np.linalg.solve(M, rhs)
            if np.all(np.isfinite(out)):
                return out
        except np.linalg.LinAlgError:
            pass
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


def _param_jacobian(qp: QpInstance, sol: QpSolution) -> np.ndarray:
    """``dF/dw`` for the three weight blocks, shape ``(dim KKT, 3T)``."""
    T, n = qp.T, qp.n
    ma = int(sol.active.sum())
    dim = n + qp.A.shape[0] + ma
    J = np.zeros((dim, 3 * T))
    p, q, h, _ = sol.split(T)
    p_hat, q_hat, h_hat = qp.center
    t = np.arange(T)
    J[t, t] = 2.0 * (p - p_hat)
    J[T + t, T + t] = 2.0 * (q - q_hat)
    J[2 * T + t, 2 * T + t] = 2.0 * (h - h_hat)
    return J


def differentiate_qp(sol: QpSolution, qp: QpInstance) -> np.ndarray:
    """Jacobian of the primal solution with respect to ``(w_p, w_q, w_h)``.

    Returns an ``(4T, 3T)`` array; the active set is held fixed.
    """
    if sol.status != "optimal":
        raise SolverError("cannot differentiate a non-optimal solution")
    M = _kkt_matrix(qp, sol)
    J = _param_jacobian(qp, sol)
    return -_kkt_solve(M, J, sol.degenerate)[:qp.n]


def qp_jvp(sol: QpSolution, qp: QpInstance, dw) -> np.ndarray:
    """Directional derivative of the primal solution along ``dw`` (3, T)."""
    dw = np.asarray(dw, dtype=float).reshape(-1)
    M = _kkt_matrix(qp, sol)
    return -_kkt_solve(M, _param_jacobian(qp, sol) @ dw, sol.degenerate)[:qp.n]


@dataclass
class QpAdjoint:
    """Gradients of a scalar with respect to every QP input used upstream."""

    w: np.ndarray          # (3, T)
    p_hat: np.ndarray
    q_hat: np.ndarray
    h_hat: np.ndarray
    xi_q: np.ndarray       # (T, 3)
    xi_v: np.ndarray       # (T, 2)


def qp_vjp(sol: QpSolution, qp: QpInstance, gx) -> QpAdjoint:
    """Reverse-mode sensitivities for an upstream gradient ``gx`` on ``x``."""
    T, n = qp.T, qp.n
    M = _kkt_matrix(qp, sol)
    rhs = np.zeros(M.shape[0])
    rhs[:n] = gx
    u = _kkt_solve(M, rhs, sol.degenerate)
    ux = u[:n]
    uy = u[n:n + qp.A.shape[0]]
    p, q, h, v = sol.split(T)
    p_hat, q_hat, h_hat = qp.center
    w_p, w_q, w_h = qp.w
    gw = np.vstack([-2.0 * ux[:T] * (p - p_hat),
                    -2.0 * ux[T:2 * T] * (q - q_hat),
                    -2.0 * ux[2 * T:3 * T] * (h - h_hat)])
    g_xi_q = np.zeros((T, 3))
    g_xi_v = np.zeros((T, 2))
    y = sol.y
    for r, (kind, t) in enumerate(qp.eq_rows):
        if kind == "flow":
            g_xi_q[t, 0] = uy[r] * p[t] + ux[t] * y[r]
            g_xi_q[t, 1] = uy[r] * h[t] + ux[2 * T + t] * y[r]
            g_xi_q[t, 2] = uy[r]
        elif kind == "vh":
            g_xi_v[t, 0] = uy[r] * h[t] + ux[2 * T + t] * y[r]
            g_xi_v[t, 1] = uy[r]
    return QpAdjoint(gw, 2.0 * w_p * ux[:T], 2.0 * w_q * ux[T:2 * T],
                     2.0 * w_h * ux[2 * T:3 * T], g_xi_q, g_xi_v)


# ---------------------------------------------------------------------------
# recursive refinement
# ---------------------------------------------------------------------------

@dataclass
class RefineStep:
    k: int
    point: Trajectory
    qp: QpInstance | None
    sol: QpSolution | None
    fallback: bool


@dataclass
class RefineTape:
    steps: list
    weights: PenaltyWeights
    infeasible_at: int | None = None

    @property
    def flagged(self) -> bool:
        return self.infeasible_at is not None


def _trajectory_from_solution(sol: QpSolution, T: int, pattern: np.ndarray) -> Trajectory:
    p, q, h, v = (np.array(a) for a in sol.split(T))
    idle = pattern == 0
    p[idle] = 0.0
    q[idle] = 0.0
    return Trajectory(p, q, h, v, pattern, role="refined")


def recursive_refine(prices, x_bar: Trajectory, w0: PenaltyWeights, model: UpcModel,
                     config: PlantConfig, glob: GlobalLinearModel, K: int | None = None,
                     gamma: float | None = None, tol: QpTolerances | None = None):
    """Run ``K`` penalized QP refinements starting from ``x_bar``.

    Weights grow as ``gamma**k * w0``.  If a QP is infeasible the previous
    iterate is kept for the remaining iterations and the tape is flagged.

    Returns
    -------
    x_K : Trajectory
        Final refined trajectory.
    tape : RefineTape
        Per-iteration data for :func:`refine_backward`.
    """
    K = int(w0.K if K is None else K)
    gamma = float(w0.gamma if gamma is None else gamma)
    if K < 1:
        raise ValueError("K must be at least 1")
    pattern = np.array(x_bar.mode)
    x = x_bar
    steps = []
    bad = None
    h0 = gross_head(config.v_init, config)
    for k in range(K):
        if bad is not None:
            steps.append(RefineStep(k, x, None, None, True))
            continue
        scale = gamma ** k
        w = (scale * w0.w_p, scale * w0.w_q, scale * w0.w_h)
        try:
            lin = local_linearize(model, config, x)
            qp = build_penalized_qp(prices, x, lin, w, config, glob, h_first=h0)
        except (ValueError, BuildError):
            bad = k
            steps.append(RefineStep(k, x, None, None, True))
            continue
        sol = solve_qp(qp, tol)
        if not sol.ok:
            bad = k
            steps.append(RefineStep(k, x, qp, sol, True))
            continue
        steps.append(RefineStep(k, x, qp, sol, False))
        x = _trajectory_from_solution(sol, x_bar.T, pattern)
    return x, RefineTape(steps, replace(w0, K=K, gamma=gamma), bad)


def refine_backward(tape: RefineTape, g_final) -> np.ndarray:
    """Gradient with respect to the initial weights ``w0`` (shape (3, T)).

    ``g_final`` is the upstream gradient on the stacked final iterate
    ``[p, q, h, v]``.  The chain runs through every QP, including the
    dependence of each expansion point on the previous solution.
    """
    T = tape.weights.T
    gx = np.asarray(g_final, dtype=float).copy()
    gw0 = np.zeros((3, T))
    gamma = tape.weights.gamma
    for st in reversed(tape.steps):
        if st.fallback:
            continue
        adj = qp_vjp(st.sol, st.qp, gx)
        gw0 += gamma ** st.k * adj.w
        if st.k == 0:
            break
        lin = st.qp.lin
        g_prev = np.zeros(4 * T)
        g_p = adj.p_hat + np.einsum("tk,tk->t", adj.xi_q, lin.dxi_q[:, :, 0])
        g_h = adj.h_hat + np.einsum("tk,tk->t", adj.xi_q, lin.dxi_q[:, :, 1])
        g_h[1:] += np.einsum("tk,tk->t", adj.xi_v[1:], lin.dxi_v[1:])
        g_prev[:T] = g_p
        g_prev[T:2 * T] = adj.q_hat
        g_prev[2 * T:3 * T] = g_h
        # idle hours of the expansion point are pinned to zero
        idle = ~st.qp.active
        g_prev[:T][idle] = 0.0
        g_prev[T:2 * T][idle] = 0.0
        gx = g_prev
    return gw0
