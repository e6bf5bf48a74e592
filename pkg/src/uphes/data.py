"""Day-ahead price data: synthetic generation, CSV I/O and scenario reduction.

Two CSV layouts are read.  The wide layout has one row per day,
``date,h1,...,h24``; the long layout has one row per hour,
``timestamp,price``, and is aggregated to days.  Scenario reduction uses
PAM k-medoids under the Euclidean distance between daily 24-vectors.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

HOURS = 24
WIDE_HEADER = ["date"] + [f"h{i}" for i in range(1, HOURS + 1)]
SCENARIO_HEADER = ["id", "weight"] + [f"h{i}" for i in range(1, HOURS + 1)]


class PriceDataError(ValueError):
    """A price file is malformed or incomplete."""


@dataclass(frozen=True)
class PriceScenario:
    """One representative day."""

    prices: np.ndarray
    id: str
    weight: float = 1.0

    def __post_init__(self):
        p = np.array(self.prices, dtype=float)
        if p.shape != (HOURS,) or not np.all(np.isfinite(p)):
            raise PriceDataError(f"scenario {self.id!r} needs {HOURS} finite prices")
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)


@dataclass
class PriceHistory:
    """Dated daily profiles, sorted by date."""

    dates: list = field(default_factory=list)
    values: np.ndarray = field(default_factory=lambda: np.zeros((0, HOURS)))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, HOURS)
        if len(self.dates) != self.values.shape[0]:
            raise PriceDataError("dates and profiles differ in number")
        if len(set(self.dates)) != len(self.dates):
            seen = set()
            dup = next(d for d in self.dates if d in seen or seen.add(d))
            raise PriceDataError(f"duplicate date {dup}")
        bad = ~np.all(np.isfinite(self.values), axis=1)
        if np.any(bad):
            raise PriceDataError(f"non-finite price on {self.dates[int(np.argmax(bad))]}")
        order = sorted(range(len(self.dates)), key=lambda i: self.dates[i])
        self.dates = [self.dates[i] for i in order]
        self.values = self.values[order]

    def __len__(self) -> int:
        return len(self.dates)

    def scenario(self, i: int, weight: float = 1.0) -> PriceScenario:
        return PriceScenario(self.values[i], self.dates[i].isoformat(), weight)


# ---------------------------------------------------------------------------
# synthetic prices
# ---------------------------------------------------------------------------
def synthetic_prices(year: int = 2024, seed: int = 0) -> PriceHistory:
    """Seeded stand-in for a year of hourly day-ahead prices.

    Each day has a morning and an evening peak on a seasonal base level,
    a midday dip that deepens in summer, cheaper weekends, a random day
    level and AR(1) hourly noise.  Prices are floored at zero and rounded to
    cents.
    """
    rng = np.random.default_rng(seed)
    start = dt.date(year, 1, 1)
    n_days = (dt.date(year + 1, 1, 1) - start).days
    hours = np.arange(HOURS)
    morning = np.exp(-0.5 * ((hours - 8.0) / 1.8) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.0) / 2.2) ** 2)
    midday = np.exp(-0.5 * ((hours - 13.0) / 2.5) ** 2)
    night = np.exp(-0.5 * ((hours - 3.5) / 2.5) ** 2)
    dates, rows = [], []
    for d in range(n_days):
        day = start + dt.timedelta(days=d)
        season = np.cos(2.0 * np.pi * (d - 15) / n_days)      # +1 mid January
        base = 75.0 + 20.0 * season + rng.normal(0.0, 10.0)
        shape = (30.0 + 5.0 * season) * morning + (45.0 + 10.0 * season) * evening
        shape -= (10.0 + 25.0 * (1.0 - season) / 2.0) * midday + 20.0 * night
        if day.weekday() >= 5:
            base *= 0.8
            shape *= 0.7
        eps = np.zeros(HOURS)
        e = rng.normal(0.0, 6.0)
        for t in range(HOURS):
            e = 0.6 * e + rng.normal(0.0, 6.0)
            eps[t] = e
        rows.append(np.round(np.maximum(base + shape + eps, 0.0), 2))
        dates.append(day)
    return PriceHistory(dates, np.array(rows))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------
def _parse_float(s: str, path, ln: int) -> float:
    try:
        x = float(s)
    except ValueError:
        raise PriceDataError(f"{path}:{ln}: cannot parse price {s!r}") from None
    if not np.isfinite(x):
        raise PriceDataError(f"{path}:{ln}: non-finite price {s!r}")
    return x


def _parse_date(s: str, path, ln: int) -> dt.date:
    try:
        return dt.date.fromisoformat(s.strip())
    except ValueError:
        raise PriceDataError(f"{path}:{ln}: cannot parse date {s!r}") from None


def _parse_timestamp(s: str, path, ln: int) -> dt.datetime:
    try:
        return dt.datetime.fromisoformat(s.strip().replace("Z", "+00:00"))
    except ValueError:
        raise PriceDataError(f"{path}:{ln}: cannot parse timestamp {s!r}") from None


def _sniff(header: list[str]) -> str:
    h = [c.strip().lower() for c in header]
    if h[:1] == ["date"] and len(h) == HOURS + 1:
        return "wide"
    if h == ["timestamp", "price"]:
        return "long"
    if h[:2] == ["id", "weight"]:
        return "scenarios"
    raise PriceDataError(f"unrecognized header {','.join(header)!r}")


def load_prices(path, fmt: str = "auto") -> PriceHistory:
    """Read a wide (``date,h1..h24``) or long (``timestamp,price``) CSV.

    Raises
    ------
    PriceDataError
        On a malformed row (with its line number), a day with missing or
        repeated hours (naming the date) or duplicate dates.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PriceDataError(f"{path}: empty file")
    kind = _sniff(rows[0]) if fmt == "auto" else fmt
    if kind not in ("wide", "long"):
        raise PriceDataError(f"{path}: expected a wide or long price file, found {kind}")
    dates, values = [], []
    if kind == "wide":
        for ln, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != HOURS + 1:
                raise PriceDataError(f"{path}:{ln}: expected {HOURS + 1} fields, got {len(row)}")
            dates.append(_parse_date(row[0], path, ln))
            values.append([_parse_float(x, path, ln) for x in row[1:]])
    else:
        days: dict = {}
        for ln, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 2:
                raise PriceDataError(f"{path}:{ln}: expected 2 fields, got {len(row)}")
            ts = _parse_timestamp(row[0], path, ln)
            hours = days.setdefault(ts.date(), {})
            if ts.hour in hours:
                raise PriceDataError(f"{path}:{ln}: repeated hour {ts.hour} on {ts.date()}")
            hours[ts.hour] = _parse_float(row[1], path, ln)
        for day in sorted(days):
            hours = days[day]
            if len(hours) != HOURS:
                missing = sorted(set(range(HOURS)) - set(hours))
                raise PriceDataError(f"{day.isoformat()}: {len(hours)} hours present, "
                                     f"missing {missing}")
            dates.append(day)
            values.append([hours[h] for h in range(HOURS)])
    return PriceHistory(dates, np.array(values).reshape(-1, HOURS))


def save_prices(history: PriceHistory, path, fmt: str = "wide") -> None:
    """Write prices as shortest round-trip decimal strings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fmt == "wide":
            w.writerow(WIDE_HEADER)
            for d, row in zip(history.dates, history.values):
                w.writerow([d.isoformat()] + [repr(float(x)) for x in row])
        elif fmt == "long":
            w.writerow(["timestamp", "price"])
            for d, row in zip(history.dates, history.values):
                for h, x in enumerate(row):
                    w.writerow([f"{d.isoformat()}T{h:02d}:00", repr(float(x))])
        else:
            raise ValueError(f"unknown price format {fmt!r}")


def save_scenarios(scenarios, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCENARIO_HEADER)
        for s in scenarios:
            w.writerow([s.id, repr(float(s.weight))] + [repr(float(x)) for x in s.prices])


def load_scenarios(path) -> list[PriceScenario]:
    """Read a scenario file, or treat each day of a price file as a scenario."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PriceDataError(f"{path}: empty file")
    if _sniff(rows[0]) != "scenarios":
        hist = load_prices(path)
        return [hist.scenario(i) for i in range(len(hist))]
    out = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != HOURS + 2:
            raise PriceDataError(f"{path}:{ln}: expected {HOURS + 2} fields, got {len(row)}")
        out.append(PriceScenario([_parse_float(x, path, ln) for x in row[2:]], row[0],
                                 _parse_float(row[1], path, ln)))
    if not out:
        raise PriceDataError(f"{path}: no scenarios")
    return out


# ---------------------------------------------------------------------------
# k-medoids
# ---------------------------------------------------------------------------
@dataclass
class MedoidResult:
    """Medoid indices, cluster labels and the PAM cost log."""

    medoids: np.ndarray
    labels: np.ndarray
    cost: float
    cost_log: list


def pam(X, k: int, seed: int = 0, max_swaps: int = 10_000) -> MedoidResult:
    """Partitioning around medoids: greedy BUILD, then steepest-descent SWAP.

    Ties are broken by a seeded permutation of the points, so the result is
    a deterministic function of ``(X, k, seed)``.  ``cost_log`` holds the
    total cost after BUILD and after every accepted swap.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k = {k} must lie in [1, {n}]")
    perm = np.random.default_rng(seed).permutation(n)
    Xp = X[perm]
    D = cdist(Xp, Xp)
    # BUILD
    med = [int(np.argmin(D.sum(axis=1)))]
    near = D[:, med[0]].copy()
    while len(med) < k:
        gain = np.maximum(near[:, None] - D, 0.0).sum(axis=0)
        gain[med] = -1.0
        j = int(np.argmax(gain))
        med.append(j)
        near = np.minimum(near, D[:, j])
    log = [float(near.sum())]
    # SWAP
    for _ in range(max_swaps):
        Dm = D[:, med]
        cur = float(Dm.min(axis=1).sum())
        best, best_pair = cur, None
        for a in range(k):
            others = np.delete(Dm, a, axis=1)
            rest = others.min(axis=1) if k > 1 else np.full(n, np.inf)
            cand = np.minimum(rest[:, None], D).sum(axis=0)
            cand[med] = np.inf
            j = int(np.argmin(cand))
            if cand[j] < best - 1e-12 * max(1.0, cur):
                best, best_pair = float(cand[j]), (a, j)
        if best_pair is None:
            break
        med[best_pair[0]] = best_pair[1]
        log.append(best)
    Dm = D[:, med]
    lab_p = np.argmin(Dm, axis=1)
    cost = float(Dm[np.arange(n), lab_p].sum())
    # back to caller order, medoids sorted by original index
    med_orig = perm[np.array(med)]
    order = np.argsort(med_orig)
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    labels = np.empty(n, dtype=int)
    labels[perm] = remap[lab_p]
    return MedoidResult(med_orig[order], labels, cost, log)


def kmedoids(history: PriceHistory, k: int = 19, seed: int = 0):
    """Representative days of a price history with cluster-size weights.

    Returns
    -------
    scenarios : list of PriceScenario
        Medoid days in date order, ids are ISO dates.
    result : MedoidResult
    """
    if k > len(history):
        raise ValueError(f"k = {k} exceeds the {len(history)} available days")
    res = pam(history.values, k, seed)
    sizes = np.bincount(res.labels, minlength=k)
    scen = [history.scenario(int(i), float(sizes[c])) for c, i in enumerate(res.medoids)]
    return scen, res
