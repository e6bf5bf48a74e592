"""Physical simulation of a power schedule and its ex-post settlement.

Each hour the scheduled power is clamped to the envelope at the current head,
the flow follows from the UPC, and if the volume would leave the admissible
range the unit is forced idle for that hour with the volume held.  The
settlement credits realized energy at the day-ahead price, charges shortfalls
an extra price and surpluses half a price, and monetizes any terminal water
above target at the median price.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import FLAG_NAMES, get_kernel
from .plant import PlantConfig, Trajectory, UpcModel, modes_from_power


@dataclass(frozen=True)
class SimOutcome:
    """Simulated trajectory plus profit decomposition (currency)."""

    trajectory: Trajectory
    flags: np.ndarray
    p_hat: np.ndarray
    v_end: float
    h_end: float
    revenue: float = float("nan")
    op_cost: float = float("nan")
    si: float = float("nan")
    vol: float = float("nan")
    profit: float = float("nan")
    prices: np.ndarray | None = field(default=None, repr=False)

    @property
    def events(self) -> list[tuple[int, str]]:
        """Hours where the simulator changed the schedule."""
        return [(t, FLAG_NAMES[int(f)]) for t, f in enumerate(self.flags) if 1 <= f <= 3]

    def to_record(self) -> dict:
        tr = self.trajectory
        return {
            "p_hat_mw": [float(x) for x in self.p_hat],
            "p_mw": [float(x) for x in tr.p],
            "q_m3s": [float(x) for x in tr.q],
            "h_m": [float(x) for x in tr.h],
            "v_m3": [float(x) for x in tr.v],
            "mode": [int(x) for x in tr.mode],
            "revenue": self.revenue,
            "op_cost": self.op_cost,
            "si": self.si,
            "vol": self.vol,
            "profit": self.profit,
            "events": [{"hour": t, "event": e} for t, e in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def simulate(p_hat, model: UpcModel, config: PlantConfig) -> SimOutcome:
    """Run the schedule ``p_hat`` [MW] through the nonlinear plant."""
    p_hat = np.asarray(p_hat, dtype=float)
    if p_hat.ndim != 1 or not np.all(np.isfinite(p_hat)):
        raise ValueError("schedule must be a finite 1-D array")
    k = get_kernel(config, model)
    p, q, vv, hh, flags = k.sim_forward(p_hat)
    mode = modes_from_power(p, config.idle_eps)
    mode[(p == 0.0)] = 0
    tr = Trajectory(p, q, hh[:-1], vv[1:], mode, role="simulated")
    return SimOutcome(tr, np.asarray(flags, dtype=np.int8), p_hat.copy(),
                      float(vv[-1]), float(hh[-1]))


def settlement_terms(p_hat, p_real, prices, dt_hours: float = 1.0):
    """Per-hour energy revenue and imbalance charge.

    Returns
    -------
    revenue, si : ndarray
        ``dt * lambda * p_real`` and ``dt * lambda * (shortfall + 0.5 * surplus)``.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    p_real = np.asarray(p_real, dtype=float)
    lam = np.asarray(prices, dtype=float)
    short = np.maximum(p_hat - p_real, 0.0)
    surp = np.maximum(p_real - p_hat, 0.0)
    return dt_hours * lam * p_real, dt_hours * lam * (short + 0.5 * surp)


def volume_penalty(v_end: float, h_end: float, prices, config: PlantConfig) -> float:
    """Median-priced energy value of water above the terminal target."""
    excess = v_end - config.v_target
    if excess <= 0.0:
        return 0.0
    lam_med = float(np.median(np.asarray(prices, dtype=float)))
    coef = config.eta_ref * config.rho * config.g / 3.6e9
    return lam_med * coef * h_end * excess


def expost_profit(outcome: SimOutcome, p_hat, prices, config: PlantConfig) -> SimOutcome:
    """Attach the profit decomposition to a simulated outcome."""
    prices = np.asarray(prices, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if prices.shape != p_hat.shape or p_hat.shape != outcome.trajectory.p.shape:
        raise ValueError("prices, schedule and trajectory lengths differ")
    if not np.array_equal(p_hat, outcome.p_hat):
        raise ValueError("outcome was simulated from a different schedule")
    p = outcome.trajectory.p
    dt_h = config.dt_hours
    rev_t, si_t = settlement_terms(p_hat, p, prices, dt_h)
    revenue = float(np.sum(rev_t))
    op_cost = float(np.sum(dt_h * config.c_op * p * p))
    si = float(np.sum(si_t))
    vol = volume_penalty(outcome.v_end, outcome.h_end, prices, config)
    profit = revenue - op_cost - si - vol
    return SimOutcome(outcome.trajectory, outcome.flags, outcome.p_hat, outcome.v_end,
                      outcome.h_end, revenue, op_cost, si, vol, profit, prices.copy())


def evaluate_schedule(p_hat, prices, model: UpcModel, config: PlantConfig) -> SimOutcome:
    """Simulate and settle in one call."""
    return expost_profit(simulate(p_hat, model, config), p_hat, prices, config)


def profit(p_hat, prices, model: UpcModel, config: PlantConfig) -> float:
    return evaluate_schedule(p_hat, prices, model, config).profit


def profit_grad(p_hat, model: UpcModel, config: PlantConfig, prices) -> np.ndarray:
    """Pathwise derivative of ex-post profit with respect to the schedule.

    Active clamps and forced-idle hours pass no signal to the hydraulics; the
    imbalance charge still depends on the scheduled power directly, so those
    hours keep ``-lambda`` (shortfall side, also used at exactly zero) or
    ``+lambda/2`` (surplus side).
    """
    p_hat = np.asarray(p_hat, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if prices.shape != p_hat.shape:
        raise ValueError("prices and schedule lengths differ")
    k = get_kernel(config, model)
    return np.asarray(k.profit_grad(p_hat, prices, float(np.median(prices))))
