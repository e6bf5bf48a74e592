"""Recurrent predictor of per-hour trust-region weights.

A single-layer LSTM reads the hourly feature rows ``[price, power, flow, head]``
and a shared affine projection maps each hidden state to three log-domain
weights.  A smooth bound transform keeps every weight strictly inside
``[w_lo, w_hi]``:

    log w = m + r * tanh((z - m) / r)

with ``m`` and ``r`` the midpoint and half-width of ``[log w_lo, log w_hi]``.
Gradients are computed by backpropagation through time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import Mode, PlantConfig, Trajectory, UpcModel, upc_eval
from .qp import W_HI, W_LO, PenaltyWeights

N_IN = 4
CHECKPOINT_VERSION = 1
_NAMES = ("Wx", "Wh", "b", "Wo", "bo")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class FeatureNorm:
    """Per-column scale constants for the feature matrix."""

    price: float = 100.0
    power: float = 10.0
    flow: float = 15.0
    h_min: float = 50.0
    h_max: float = 99.0

    @classmethod
    def from_plant(cls, model: UpcModel, config: PlantConfig) -> "FeatureNorm":
        hs = np.linspace(config.h_min, config.h_max, 50)
        p_ref, q_ref = 0.0, 0.0
        for m in (Mode.TURBINE, Mode.PUMP):
            if m not in model.envelope:
                continue
            lo, hi = model.power_bounds(m, hs)
            for pk in (lo, hi):
                p_ref = max(p_ref, float(np.max(np.abs(pk))))
                q_ref = max(q_ref, float(np.max(np.abs(upc_eval(model, m, pk, hs)))))
        return cls(100.0, p_ref or 1.0, q_ref or 1.0, config.h_min, config.h_max)

    def as_array(self) -> np.ndarray:
        return np.array([self.price, self.power, self.flow, self.h_min, self.h_max])


def build_features(prices, traj: Trajectory, norm: FeatureNorm) -> np.ndarray:
    """``(T, 4)`` normalized rows ``[price, power, flow, head]``."""
    lam = np.asarray(prices, dtype=float)
    X = np.column_stack([lam / norm.price, traj.p / norm.power, traj.q / norm.flow,
                         (traj.h - norm.h_min) / (norm.h_max - norm.h_min)])
    return X


@dataclass
class NetParams:
    """LSTM gate parameters (gate order input, forget, cell, output) and projection."""

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    norm: FeatureNorm = field(default_factory=FeatureNorm)
    w_lo: float = W_LO
    w_hi: float = W_HI

    @property
    def H(self) -> int:
        return self.Wh.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in _NAMES]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "NetParams":
        vec = np.asarray(vec, dtype=float)
        out, k = [], 0
        for a in self.arrays():
            out.append(vec[k:k + a.size].reshape(a.shape).copy())
            k += a.size
        if k != vec.size:
            raise ValueError("parameter vector has the wrong length")
        return NetParams(*out, norm=self.norm, w_lo=self.w_lo, w_hi=self.w_hi)

    def copy(self) -> "NetParams":
        return self.with_flat(self.flat())

    def check(self):
        H = self.H
        shapes = {"Wx": (4 * H, N_IN), "Wh": (4 * H, H), "b": (4 * H,), "Wo": (3, H), "bo": (3,)}
        for k, s in shapes.items():
            a = getattr(self, k)
            if a.shape != s:
                raise ValueError(f"{k} has shape {a.shape}, expected {s}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{k} has non-finite entries")


def log_bounds(w_lo: float, w_hi: float) -> tuple[float, float]:
    """Midpoint and half-width of the log-weight interval."""
    a, b = np.log(w_lo), np.log(w_hi)
    return 0.5 * (a + b), 0.5 * (b - a)


def init_params(H: int, seed: int = 0, norm: FeatureNorm | None = None,
                w_lo: float = W_LO, w_hi: float = W_HI) -> NetParams:
    """Uniform gate weights, unit forget bias, projection that starts at the log midpoint.

    The projection matrix starts at zero, so the untrained network predicts the
    geometric midpoint of the bounds in every hour.
    """
    if H < 1:
        raise ValueError("hidden size must be at least 1")
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(H)
    Wx = rng.uniform(-k, k, (4 * H, N_IN))
    Wh = rng.uniform(-k, k, (4 * H, H))
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    mid, _ = log_bounds(w_lo, w_hi)
    return NetParams(Wx, Wh, b, np.zeros((3, H)), np.full(3, mid), norm or FeatureNorm(),
                     w_lo, w_hi)


@dataclass
class ForwardCache:
    X: np.ndarray
    gates: np.ndarray   # (T, 4H) activated
    c: np.ndarray       # (T+1, H)
    h: np.ndarray       # (T+1, H)
    u: np.ndarray       # (T, 3) tanh argument of the bound transform
    w: np.ndarray       # (T, 3)


def forward(theta: NetParams, X) -> tuple[np.ndarray, ForwardCache]:
    """Weights ``(T, 3)`` ordered ``(w_p, w_q, w_h)`` and the cache for backward."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_IN:
        raise ValueError(f"features must have shape (T, {N_IN})")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    H = theta.H
    T = X.shape[0]
    gates = np.zeros((T, 4 * H))
    c = np.zeros((T + 1, H))
    h = np.zeros((T + 1, H))
    xin = X @ theta.Wx.T + theta.b
    for t in range(T):
        a = xin[t] + theta.Wh @ h[t]
        gi = _sigmoid(a[:H])
        gf = _sigmoid(a[H:2 * H])
        gg = np.tanh(a[2 * H:3 * H])
        go = _sigmoid(a[3 * H:])
        gates[t] = np.concatenate([gi, gf, gg, go])
        c[t + 1] = gf * c[t] + gi * gg
        h[t + 1] = go * np.tanh(c[t + 1])
    z = h[1:] @ theta.Wo.T + theta.bo
    mid, rad = log_bounds(theta.w_lo, theta.w_hi)
    u = (z - mid) / rad
    w = np.exp(mid + rad * np.tanh(u))
    return w, ForwardCache(X, gates, c, h, u, w)


def backward(theta: NetParams, cache: ForwardCache | None, dw) -> NetParams:
    """Gradient of a scalar loss with respect to all parameters, given ``dL/dw``."""
    if cache is None:
        raise ValueError("backward needs the cache of a forward pass")
    dw = np.asarray(dw, dtype=float)
    H = theta.H
    T = cache.X.shape[0]
    if dw.shape != (T, 3):
        raise ValueError(f"upstream gradient must have shape ({T}, 3)")
    th = np.tanh(cache.u)
    dz = dw * cache.w * (1.0 - th * th)  # d log w / dz = sech^2(u)
    gWo = dz.T @ cache.h[1:]
    gbo = dz.sum(axis=0)
    dh_all = dz @ theta.Wo
    gWx = np.zeros_like(theta.Wx)
    gWh = np.zeros_like(theta.Wh)
    gb = np.zeros_like(theta.b)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        gi, gf, gg, go = (cache.gates[t, k * H:(k + 1) * H] for k in range(4))
        ct = cache.c[t + 1]
        tc = np.tanh(ct)
        dh = dh_all[t] + dh_next
        dgo = dh * tc
        dc = dc_next + dh * go * (1.0 - tc * tc)
        dgi = dc * gg
        dgf = dc * cache.c[t]
        dgg = dc * gi
        da = np.concatenate([dgi * gi * (1.0 - gi), dgf * gf * (1.0 - gf),
                             dgg * (1.0 - gg * gg), dgo * go * (1.0 - go)])
        gWx += np.outer(da, cache.X[t])
        gWh += np.outer(da, cache.h[t])
        gb += da
        dh_next = theta.Wh.T @ da
        dc_next = dc * gf
    return NetParams(gWx, gWh, gb, gWo, gbo, theta.norm, theta.w_lo, theta.w_hi)


def predict_weights(theta: NetParams, X, gamma: float = 2.0, K: int = 3) -> PenaltyWeights:
    w, _ = forward(theta, X)
    return PenaltyWeights(w[:, 0], w[:, 1], w[:, 2], gamma, K, theta.w_lo, theta.w_hi)


def clip_by_norm(g: np.ndarray, c: float) -> tuple[np.ndarray, float]:
    """Rescale ``g`` so its Euclidean norm is at most ``c``; returns the original norm."""
    if c <= 0:
        raise ValueError("clip norm must be positive")
    n = float(np.linalg.norm(g))
    if n > c:
        return g * (c / n), n
    return g, n


def save_checkpoint(theta: NetParams, path, extra: dict | None = None) -> None:
    """Exact ``.npz`` container for parameters, bounds and normalization."""
    data = {k: a for k, a in zip(_NAMES, theta.arrays())}
    data.update(version=np.array(CHECKPOINT_VERSION), H=np.array(theta.H),
                norm=theta.norm.as_array(), bounds=np.array([theta.w_lo, theta.w_hi]))
    for k, v in (extra or {}).items():
        data["extra_" + k] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **data)


def load_checkpoint(path) -> NetParams:
    with np.load(path) as d:
        if int(d["version"]) != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        nm = d["norm"]
        theta = NetParams(*(d[k].copy() for k in _NAMES),
                          norm=FeatureNorm(*(float(x) for x in nm)),
                          w_lo=float(d["bounds"][0]), w_hi=float(d["bounds"][1]))
    theta.check()
    return theta
