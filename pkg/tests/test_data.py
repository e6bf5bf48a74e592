import datetime as dt
import itertools

import numpy as np
import pytest

from uphes.data import (PriceDataError, PriceHistory, PriceScenario, kmedoids, load_prices,
                        load_scenarios, pam, save_prices, save_scenarios, synthetic_prices)


def _day(i):
    return dt.date(2024, 1, 1) + dt.timedelta(days=i)


def _constant_history(levels):
    return PriceHistory([_day(i) for i in range(len(levels))],
                        np.repeat(np.asarray(levels, dtype=float)[:, None], 24, axis=1))


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------
def test_wide_csv_single_day(tmp_path):
    path = tmp_path / "wide.csv"
    path.write_text("date," + ",".join(f"h{i}" for i in range(1, 25)) + "\n"
                    "2024-03-01," + ",".join(str(10 + i) for i in range(24)) + "\n")
    hist = load_prices(path)
    assert len(hist) == 1
    assert hist.dates == [dt.date(2024, 3, 1)]
    assert np.array_equal(hist.values[0], np.arange(10, 34, dtype=float))


def test_long_csv_missing_hour_names_the_date(tmp_path):
    path = tmp_path / "long.csv"
    lines = ["timestamp,price"] + [f"2024-03-02T{h:02d}:00,{50 + h}" for h in range(23)]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(PriceDataError, match="2024-03-02"):
        load_prices(path)


def test_long_csv_aggregates_days(tmp_path):
    path = tmp_path / "long.csv"
    lines = ["timestamp,price"]
    for d in ("2024-03-03", "2024-03-02"):
        lines += [f"{d}T{h:02d}:00,{h}.5" for h in range(24)]
    path.write_text("\n".join(lines) + "\n")
    hist = load_prices(path)
    assert hist.dates == [dt.date(2024, 3, 2), dt.date(2024, 3, 3)]
    assert np.array_equal(hist.values[1], np.arange(24) + 0.5)


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("date," + ",".join(f"h{i}" for i in range(1, 25)) + "\n"
                    "2024-03-01," + ",".join(["1"] * 24) + "\n"
                    "2024-03-02," + ",".join(["1"] * 23 + ["x"]) + "\n")
    with pytest.raises(PriceDataError, match=":3:"):
        load_prices(path)


def test_duplicate_dates_rejected():
    with pytest.raises(PriceDataError, match="duplicate"):
        PriceHistory([_day(0), _day(0)], np.zeros((2, 24)))


def test_round_trip_is_bit_exact(tmp_path):
    hist = synthetic_prices(seed=3)
    vals = hist.values + np.random.default_rng(0).uniform(0, 1e-3, hist.values.shape)
    hist = PriceHistory(hist.dates, vals)
    for fmt in ("wide", "long"):
        path = tmp_path / f"{fmt}.csv"
        save_prices(hist, path, fmt)
        back = load_prices(path)
        assert back.dates == hist.dates
        assert np.array_equal(back.values, hist.values)


def test_scenario_file_round_trip(tmp_path):
    scen, _ = kmedoids(synthetic_prices(), 5, 0)
    path = tmp_path / "s.csv"
    save_scenarios(scen, path)
    back = load_scenarios(path)
    assert [s.id for s in back] == [s.id for s in scen]
    assert all(np.array_equal(a.prices, b.prices) and a.weight == b.weight
               for a, b in zip(back, scen))


def test_price_file_loads_as_scenarios(tmp_path):
    hist = _constant_history([1.0, 2.0])
    path = tmp_path / "p.csv"
    save_prices(hist, path)
    scen = load_scenarios(path)
    assert [s.id for s in scen] == ["2024-01-01", "2024-01-02"]


def test_scenario_needs_24_finite_prices():
    with pytest.raises(PriceDataError):
        PriceScenario(np.zeros(23), "x")
    with pytest.raises(PriceDataError):
        PriceScenario(np.full(24, np.nan), "x")


# ---------------------------------------------------------------------------
# synthetic prices
# ---------------------------------------------------------------------------
def test_synthetic_prices_are_seeded():
    a, b = synthetic_prices(seed=1), synthetic_prices(seed=1)
    assert len(a) == 366
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, synthetic_prices(seed=2).values)
    assert np.all(a.values >= 0.0)
    # two daily peaks above the night trough on average
    mean = a.values.mean(axis=0)
    assert mean[8] > mean[3] and mean[19] > mean[13]


# ---------------------------------------------------------------------------
# k-medoids
# ---------------------------------------------------------------------------
def test_saturated_k_gives_every_day():
    hist = _constant_history([3.0, 1.0, 7.0, 2.0])
    scen, res = kmedoids(hist, 4, 0)
    assert [s.weight for s in scen] == [1.0] * 4
    assert sorted(res.medoids.tolist()) == [0, 1, 2, 3]
    assert res.cost == 0.0


def test_three_point_example_against_exhaustive_search():
    hist = _constant_history([0.0, 0.1, 10.0])
    X = hist.values
    best = min(sum(min(np.linalg.norm(X[i] - X[m]) for m in pair) for i in range(3))
               for pair in itertools.combinations(range(3), 2))
    _, res = kmedoids(hist, 2, 0)
    assert 2 in res.medoids.tolist() and len(set(res.medoids.tolist()) & {0, 1}) == 1
    assert res.cost == pytest.approx(best, rel=1e-12)
    # constant profiles 0.1 apart are 0.1 * sqrt(24) apart in the 24-hour space
    assert res.cost == pytest.approx(0.1 * np.sqrt(24), rel=1e-12)


def test_pam_matches_exhaustive_search_on_small_sets():
    rng = np.random.default_rng(7)
    for _ in range(10):
        X = rng.normal(size=(8, 3))
        D = np.linalg.norm(X[:, None] - X[None], axis=2)
        best = min(D[:, list(c)].min(axis=1).sum() for c in itertools.combinations(range(8), 3))
        res = pam(X, 3, seed=0)
        assert res.cost >= best - 1e-12
        assert res.cost <= 1.2 * best


def test_swap_cost_never_increases():
    res = pam(synthetic_prices().values, 19, seed=0)
    assert np.all(np.diff(res.cost_log) <= 0.0)
    assert res.cost == pytest.approx(res.cost_log[-1], rel=1e-12)


def test_kmedoids_weights_and_determinism():
    hist = synthetic_prices()
    a, ra = kmedoids(hist, 19, 0)
    b, rb = kmedoids(hist, 19, 0)
    assert len(a) == 19 and [s.id for s in a] == [s.id for s in b]
    assert sum(s.weight for s in a) == len(hist)
    assert [s.id for s in a] == sorted(s.id for s in a)
    ids = {d.isoformat() for d in hist.dates}
    assert all(s.id in ids for s in a)


def test_k_too_large():
    with pytest.raises(ValueError):
        kmedoids(_constant_history([1.0, 2.0]), 3, 0)
    with pytest.raises(ValueError):
        pam(np.zeros((2, 24)), 0)
