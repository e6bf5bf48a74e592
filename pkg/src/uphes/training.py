"""Decision-focused training of the penalty network and the evaluation harness.

Each training sample pairs a price day with a warm-start trajectory.  The
network predicts per-hour penalty weights, the recursive QP refinement turns
the warm start into a schedule, the simulator settles it, and the loss is the
negative ex-post profit.  Gradients flow back through the simulator, every
refinement QP and the recurrent network.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .approx import EvalPoints, GlobalLinearModel, points_from_trajectories
from .errors import DomainError
from .penalty_net import (NetParams, build_features, backward, clip_by_norm, forward,
                          log_bounds)
from .plant import Mode, PlantConfig, Trajectory, UpcModel, gross_head, upc_eval
from .qp import PenaltyWeights, QpTolerances, recursive_refine, refine_backward
from .simulator import evaluate_schedule, profit_grad

NOISE_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
RANDOM_RANGE = (0.1, 0.8)
VARIANTS = ("dfl", "no_rec", "no_nn", "raw")
LOG_COLUMNS = ("epoch", "loss", "val_profit", "lr", "grad_norm", "seconds")
REPORT_COLUMNS = ("method", "profit_mean", "profit_std", "time_s")


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainingSample:
    """Price day, warm start and where the warm start came from."""

    prices: np.ndarray
    warm: Trajectory
    level: float
    noise: str
    source: str
    scenario: str


def _envelope(model: UpcModel, mode: int, h: float):
    lo, hi = model.power_bounds(Mode(mode), h)
    return float(lo), float(hi)


def perturb_schedule(baseline: Trajectory, noise_level, model: UpcModel, config: PlantConfig,
                     seed=0) -> Trajectory:
    """Mode-preserving random perturbation of a schedule.

    Each active hour's power moves by ``U(-1, 1) * level * (hi - lo)`` with
    ``[lo, hi]`` the envelope at the re-integrated head, then is clamped to
    the envelope.  Flows are recomputed from the UPC and volumes and heads
    are integrated forward.  If the perturbed power would push the volume
    out of range it is pulled back toward the baseline's fraction of the
    envelope, then toward the low-flow end.  If drift from earlier hours
    leaves no feasible power at all, the whole draw is halved and retried;
    at zero scale the baseline itself is reproduced.

    ``noise_level`` is a float in ``[0, 0.8]`` or ``"random"``, which draws the
    level from ``U(0.1, 0.8)`` with the same generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    level = _noise_level(noise_level, rng)
    baseline.validate()
    if level == 0.0:
        return baseline.with_role("warm_start")
    u = rng.uniform(-1.0, 1.0, baseline.T)
    # shrink the whole draw when drift leaves some hour without a feasible power
    for scale in [0.5 ** i for i in range(40)] + [0.0]:
        out = _integrate_perturbed(baseline, scale * level * u, model, config)
        if out is not None:
            return out
    raise DomainError("baseline schedule cannot be re-integrated inside the volume range")


def _integrate_perturbed(baseline: Trajectory, shift, model: UpcModel, config: PlantConfig):
    T = baseline.T
    p = np.zeros(T)
    q = np.zeros(T)
    h = np.zeros(T)
    v = np.zeros(T)
    v_prev = config.v_init
    ht = gross_head(v_prev, config)
    for t in range(T):
        h[t] = ht
        md = int(baseline.mode[t])
        if md == Mode.IDLE:
            v[t] = v_prev
            continue
        lo, hi = _envelope(model, md, ht)
        lo0, hi0 = _envelope(model, md, float(baseline.h[t]))
        frac0 = (baseline.p[t] - lo0) / (hi0 - lo0) if hi0 > lo0 else 0.5
        base = lo + min(max(frac0, 0.0), 1.0) * (hi - lo)
        target = min(max(base + shift[t] * (hi - lo), lo), hi)
        # retreat toward the baseline fraction, then the low-flow end, if needed
        low_flow = lo if md == Mode.TURBINE else hi
        pt, qt = None, 0.0
        for cand in (target, base, low_flow):
            qc = float(upc_eval(model, md, cand, ht))
            if config.v_min <= v_prev + config.dt * qc <= config.v_max:
                pt, qt = cand, qc
                break
        if pt is None:
            return None
        if pt != target:
            a, b = pt, target
            for _ in range(60):
                mid = 0.5 * (a + b)
                qm = float(upc_eval(model, md, mid, ht))
                if config.v_min <= v_prev + config.dt * qm <= config.v_max:
                    a, qt = mid, qm
                else:
                    b = mid
            pt = a
        p[t], q[t] = pt, qt
        v_prev = v_prev + config.dt * qt
        v[t] = v_prev
        ht = gross_head(v_prev, config)
    return Trajectory(p, q, h, v, baseline.mode, role="warm_start")


def _noise_level(noise_level, rng) -> float:
    if isinstance(noise_level, str):
        if noise_level != "random":
            raise ValueError(f"noise level must be a number or 'random', got {noise_level!r}")
        return float(rng.uniform(*RANDOM_RANGE))
    level = float(noise_level)
    if not 0.0 <= level <= 0.8:
        raise ValueError(f"noise level {level} outside [0, 0.8]")
    return level


def baseline_schedules(scenarios, model: UpcModel, config: PlantConfig,
                       grid=None) -> list:
    """DP schedules that respect the terminal volume bound, one per scenario."""
    from .baselines import default_dp_grid, dp_schedule
    grid = grid or default_dp_grid(config)
    return [dp_schedule(sc.prices, grid, model, config, hard_terminal=True)[0]
            for sc in scenarios]


def error_points(scenarios, model: UpcModel, config: PlantConfig, n_points: int = 480,
                 seed: int = 0) -> EvalPoints:
    """Operating points for approximation-error reports.

    Active hours of the DP baselines and of two random-noise warm starts per
    scenario, shuffled with ``seed`` and truncated to ``n_points``.
    """
    bases = baseline_schedules(scenarios, model, config)
    warm = [s.warm for s in make_samples(scenarios, bases, "random", model, config,
                                         n_variants=2, seed=seed)]
    pts = points_from_trajectories(bases + warm, config)
    idx = np.random.default_rng(seed).permutation(len(pts))[:n_points]
    return EvalPoints(pts.mode[idx], pts.p[idx], pts.h[idx], pts.v[idx])


def make_samples(scenarios, baselines, noise, model: UpcModel, config: PlantConfig,
                 n_variants: int = 8, seed: int = 0, source: str = "dp") -> list:
    """Perturbed warm starts for every scenario.

    ``noise`` is ``"random"`` (``n_variants`` draws per scenario), a single
    level, or a sequence of levels (one variant per level).
    """
    rng = np.random.default_rng(seed)
    if isinstance(noise, str):
        plan = [noise] * n_variants
    elif np.ndim(noise) == 0:
        plan = [float(noise)] * n_variants
    else:
        plan = [float(x) for x in noise]
    out = []
    for sc, base in zip(scenarios, baselines):
        for lv in plan:
            level = _noise_level(lv, rng)
            warm = perturb_schedule(base, level, model, config, rng)
            tag = "random" if isinstance(lv, str) else f"{level:g}"
            out.append(TrainingSample(np.asarray(sc.prices, dtype=float), warm, level, tag,
                                      source, sc.id))
    return out


def split_by_scenario(samples, val_frac: float = 0.2, seed: int = 0):
    """Deterministic train/validation split that keeps each scenario on one side."""
    ids = sorted({s.scenario for s in samples})
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_val = int(round(val_frac * len(ids)))
    if len(ids) > 1:
        n_val = min(max(n_val, 1), len(ids) - 1)
    else:
        n_val = 0
    val_ids = set(order[:n_val])
    return ([s for s in samples if s.scenario not in val_ids],
            [s for s in samples if s.scenario in val_ids])


# ---------------------------------------------------------------------------
# one pass through the pipeline
# ---------------------------------------------------------------------------
@dataclass
class PassResult:
    profit: float
    schedule: np.ndarray
    weights: np.ndarray
    flagged: bool
    seconds: float
    outcome: object = field(repr=False, default=None)


def constant_weights(T: int, w_lo: float, w_hi: float, gamma: float, K: int) -> PenaltyWeights:
    """Geometric midpoint of the weight bounds in every hour and component."""
    mid, _ = log_bounds(w_lo, w_hi)
    w = float(np.exp(mid))
    return PenaltyWeights(np.full(T, w), np.full(T, w), np.full(T, w), gamma, K, w_lo, w_hi)


def run_pass(sample: TrainingSample, weights: PenaltyWeights, model: UpcModel,
             config: PlantConfig, glob: GlobalLinearModel, K: int, gamma: float,
             tol: QpTolerances | None = None, need_grad: bool = False):
    """Refine, simulate and settle one sample; optionally return ``dPi/dw0`` as (T, 3)."""
    t0 = time.perf_counter()
    x_K, tape = recursive_refine(sample.prices, sample.warm, weights, model, config, glob,
                                 K=K, gamma=gamma, tol=tol)
    sched = np.array(x_K.p)
    out = evaluate_schedule(sched, sample.prices, model, config)
    g = None
    if need_grad:
        T = sample.warm.T
        gp = profit_grad(sched, model, config, sample.prices)
        gx = np.zeros(4 * T)
        gx[:T] = gp
        g = refine_backward(tape, gx).T
    res = PassResult(out.profit, sched, weights.stack(), tape.flagged,
                     time.perf_counter() - t0, out)
    return res, g


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings."""

    epochs: int = 200
    lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stop: int = 15
    clip: float = 1.0
    K: int = 3
    gamma: float = 2.0
    seed: int = 0
    batch: str = "sample"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.K < 1 or self.plateau_patience < 1 or self.early_stop < 1:
            raise ValueError("epochs, K and patiences must be positive")
        if self.lr < 0.0:
            raise ValueError("learning rate must be non-negative")
        if not self.clip > 0.0:
            raise ValueError("clip norm must be positive")
        if not 0.0 < self.plateau_factor <= 1.0 or self.gamma <= 0.0:
            raise ValueError("plateau factor must lie in (0, 1] and gamma be positive")
        if self.batch not in ("sample", "mean"):
            raise ValueError("batch must be 'sample' or 'mean'")


class Adam:
    """Adaptive-moment optimizer on a flat parameter vector."""

    def __init__(self, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        mh = self.m / (1.0 - self.b1 ** self.t)
        vh = self.v / (1.0 - self.b2 ** self.t)
        return theta - self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class TrainLog:
    """Per-epoch rows plus the per-sample records behind each training loss."""

    rows: list = field(default_factory=list)
    samples: list = field(default_factory=list)   # per epoch: list of (index, profit, schedule)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])


def _features(theta: NetParams, s: TrainingSample) -> np.ndarray:
    return build_features(s.prices, s.warm, theta.norm)


def _weights(theta: NetParams, X, cfg: TrainConfig):
    w, cache = forward(theta, X)
    pw = PenaltyWeights(w[:, 0], w[:, 1], w[:, 2], cfg.gamma, cfg.K, theta.w_lo, theta.w_hi)
    return pw, cache


def mean_profit(theta: NetParams, samples, model, config, glob, K: int, gamma: float,
                tol: QpTolerances | None = None) -> float:
    cfg = TrainConfig(K=K, gamma=gamma)
    vals = []
    for s in samples:
        pw, _ = _weights(theta, _features(theta, s), cfg)
        vals.append(run_pass(s, pw, model, config, glob, K, gamma, tol)[0].profit)
    return float(np.mean(vals))


def train(samples, theta0: NetParams, cfg: TrainConfig, model: UpcModel, config: PlantConfig,
          glob: GlobalLinearModel, val_samples=None, tol: QpTolerances | None = None,
          callback=None):
    """Decision-focused training with early stopping on held-out mean profit.

    Parameters
    ----------
    samples : list of TrainingSample
        Training set.  When ``val_samples`` is None it is split 80/20 by
        scenario with ``cfg.seed``.
    theta0 : NetParams
        Initial parameters (not modified).

    Returns
    -------
    theta : NetParams
        Parameters of the epoch with the best validation profit (``theta0`` if
        no epoch improved on it).
    log : TrainLog
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training set is empty")
    if val_samples is None:
        samples, val_samples = split_by_scenario(samples, 0.2, cfg.seed)
        if not val_samples:
            val_samples = samples
    rng = np.random.default_rng(cfg.seed)
    theta = theta0.copy()
    vec = theta.flat()
    opt = Adam(vec.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    feats = [_features(theta, s) for s in samples]
    log = TrainLog()
    best_val = mean_profit(theta, val_samples, model, config, glob, cfg.K, cfg.gamma, tol)
    best_theta = theta.copy()
    since_best = 0
    since_plateau = 0
    plateau_ref = best_val
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(samples))
        profits = np.zeros(len(samples))
        records = []
        norms = []
        acc = np.zeros_like(vec)
        for i in order:
            s = samples[i]
            pw, cache = _weights(theta, feats[i], cfg)
            res, g_w = run_pass(s, pw, model, config, glob, cfg.K, cfg.gamma, tol,
                                need_grad=True)
            if not np.isfinite(res.profit) or not np.all(np.isfinite(g_w)):
                raise FloatingPointError(f"non-finite loss or gradient on sample {i} "
                                         f"(scenario {s.scenario}, noise {s.noise})")
            profits[i] = res.profit
            records.append((int(i), res.profit, res.schedule))
            grad = backward(theta, cache, -g_w).flat()     # loss = -profit
            if cfg.batch == "mean":
                acc += grad / len(samples)
                continue
            grad, gn = clip_by_norm(grad, cfg.clip)
            norms.append(gn)
            vec = opt.step(vec, grad)
            theta = theta.with_flat(vec)
        if cfg.batch == "mean":
            grad, gn = clip_by_norm(acc, cfg.clip)
            norms.append(gn)
            vec = opt.step(vec, grad)
            theta = theta.with_flat(vec)
        loss = -float(np.mean(profits))
        val = mean_profit(theta, val_samples, model, config, glob, cfg.K, cfg.gamma, tol)
        row = {"epoch": epoch, "loss": loss, "val_profit": val, "lr": opt.lr,
               "grad_norm": float(np.mean(norms)), "seconds": time.perf_counter() - t0}
        log.rows.append(row)
        log.samples.append(sorted(records, key=lambda r: r[0]))
        if callback is not None:
            callback(row)
        if val > best_val:
            best_val, best_theta, since_best = val, theta.copy(), 0
            log.best_epoch = epoch
        else:
            since_best += 1
        if val > plateau_ref:
            plateau_ref, since_plateau = val, 0
        else:
            since_plateau += 1
            if since_plateau >= cfg.plateau_patience:
                opt.lr *= cfg.plateau_factor
                since_plateau = 0
        if since_best >= cfg.early_stop:
            log.stopped_early = True
            break
    return best_theta, log


def recompute_loss(log: TrainLog, epoch: int, samples, model, config) -> float:
    """Training loss of ``epoch`` rebuilt from its logged schedules."""
    recs = log.samples[epoch - 1]
    profits = np.zeros(len(samples))
    for i, _, sched in recs:
        profits[i] = evaluate_schedule(sched, samples[i].prices, model, config).profit
    return -float(np.mean(profits))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
@dataclass
class EvalRecord:
    method: str
    scenario: str
    noise: str
    level: float
    profit: float
    si: float
    vol: float
    seconds: float


def evaluate(method: str, samples, model: UpcModel, config: PlantConfig,
             glob: GlobalLinearModel, theta: NetParams | None = None, K: int = 3,
             gamma: float = 2.0, w_lo: float | None = None, w_hi: float | None = None,
             tol: QpTolerances | None = None) -> list:
    """Ex-post outcome of one method on every sample.

    ``dfl`` refines with network weights and ``K`` passes, ``no_rec`` with the
    same network and a single pass, ``no_nn`` with constant midpoint weights,
    and ``raw`` simulates the warm start as is.
    """
    if method not in VARIANTS:
        raise ValueError(f"unknown method {method!r}")
    samples = list(samples)
    if not samples:
        raise ValueError("no scenarios to evaluate")
    if method in ("dfl", "no_rec") and theta is None:
        raise ValueError(f"method {method} needs network parameters")
    if theta is not None:
        w_lo = theta.w_lo if w_lo is None else w_lo
        w_hi = theta.w_hi if w_hi is None else w_hi
    from .qp import W_HI, W_LO
    w_lo = W_LO if w_lo is None else w_lo
    w_hi = W_HI if w_hi is None else w_hi
    out = []
    for s in samples:
        t0 = time.perf_counter()
        if method == "raw":
            o = evaluate_schedule(s.warm.p, s.prices, model, config)
        else:
            k = 1 if method == "no_rec" else K
            if method == "no_nn":
                pw = constant_weights(s.warm.T, w_lo, w_hi, gamma, k)
            else:
                w, _ = forward(theta, build_features(s.prices, s.warm, theta.norm))
                pw = PenaltyWeights(w[:, 0], w[:, 1], w[:, 2], gamma, k, w_lo, w_hi)
            o = run_pass(s, pw, model, config, glob, k, gamma, tol)[0].outcome
        out.append(EvalRecord(method, s.scenario, s.noise, s.level, o.profit, o.si, o.vol,
                              time.perf_counter() - t0))
    return out


def summarize(records) -> list[dict]:
    """One row per method: mean and standard deviation of profit, mean wall time."""
    rows = []
    methods = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
    for m in methods:
        pr = np.array([r.profit for r in records if r.method == m])
        ts = np.array([r.seconds for r in records if r.method == m])
        rows.append({"method": m, "profit_mean": float(pr.mean()),
                     "profit_std": float(pr.std(ddof=1)) if pr.size > 1 else 0.0,
                     "time_s": float(ts.mean())})
    return rows


def write_report(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r["method"]] + [repr(float(r[k])) for k in REPORT_COLUMNS[1:]])


def write_records(records, path) -> None:
    """Per-scenario plot data: profit against noise level, SI and Vol."""
    cols = ("method", "scenario", "noise", "level", "profit", "si", "vol", "seconds")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            d = asdict(r)
            w.writerow([d[c] if isinstance(d[c], str) else repr(float(d[c])) for c in cols])


def noise_curve(records) -> list[dict]:
    """Mean profit per method and noise tag."""
    keys = []
    for r in records:
        if (r.method, r.noise) not in keys:
            keys.append((r.method, r.noise))
    return [{"method": m, "noise": n,
             "profit_mean": float(np.mean([r.profit for r in records
                                           if r.method == m and r.noise == n]))}
            for m, n in keys]

