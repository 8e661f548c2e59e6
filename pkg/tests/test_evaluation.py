import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetnet.controller import ExperimentLog
from hetnet.evaluation import (
    DegeneratePeriod, aggregate_experiments, bootstrap_ordering, cis, normalize_performance,
    normalized_curves, prediction_accuracy, running_average, score_selections,
    write_curves, write_experiment_report, write_simulation_report,
)
from hetnet.predictors import TestCase as Case


def test_cis_examples():
    assert cis(0.4, 0.15, 0.0) == pytest.approx(0.625)
    assert cis(0.4, 0.0, 0.0) == 1.0
    assert cis(0.4, 0.4, 0.0) == 0.0
    assert cis(0.4, 0.6, 0.0) == pytest.approx(-0.5)


def test_cis_degenerate():
    with pytest.raises(DegeneratePeriod):
        cis(0.3, 0.1, 0.3)
    with pytest.raises(ValueError):
        cis(0.3, 0.1, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1), st.floats(0, 1), st.floats(0, 0.99), st.floats(0.1, 10),
       st.floats(-5, 5))
def test_cis_affine_invariance(p0, pp_frac, pcv_frac, a, b):
    pcv = p0 * pcv_frac
    pp = pp_frac
    lhs = cis(p0, pp, pcv)
    rhs = cis(a * p0 + b, a * pp + b, a * pcv + b)
    assert rhs == pytest.approx(lhs, rel=1e-6, abs=1e-6)


def test_prediction_accuracy():
    assert prediction_accuracy([1, 2, 3, 4], [1, 2, 4, 4]) == 0.75
    with pytest.raises(ValueError):
        prediction_accuracy([1], [1, 2])
    with pytest.raises(ValueError):
        prediction_accuracy([], [])


def test_normalize_performance():
    assert normalize_performance({"A": 0.0, "B": 10.0, "C": 5.0}) == {"A": 0, "B": 1, "C": 0.5}
    assert normalize_performance({"A": 3.0, "B": 3.0}) == {"A": 0.5, "B": 0.5}
    with pytest.raises(ValueError):
        normalize_performance({"A": 1.0})


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(-1e6, 1e6), min_size=2))
def test_normalize_bounds(f):
    out = normalize_performance(f)
    assert all(0 <= v <= 1 for v in out.values())
    if len(set(f.values())) > 1:
        assert min(out.values()) == 0 and max(out.values()) == 1


def test_running_average():
    assert np.array_equal(running_average([0, 1, 1]), [0, 0, 0.5])
    assert np.allclose(running_average([2, 4, 6, 8]), [2, 2, 3, 4])
    with pytest.raises(ValueError):
        running_average([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_running_average_bounds(r):
    out = running_average(r)
    assert np.all(out >= min(r) - 1e-12) and np.all(out <= max(r) + 1e-12)


def _case(outcome):
    return Case(None, dict(enumerate(outcome)), tuple(range(1, len(outcome))))


def test_score_selections():
    cases = [_case([0.4, 0.0, 0.15, 0.3]), _case([0.5, 0.3, 0.1, 0.5]),
             _case([0.2, 0.3, 0.3, 0.3])]  # last one is degenerate
    s = score_selections("X", cases, [1, 1, 2])
    # all candidates tie in the last case, so its pick counts as a hit
    assert s.accuracy == pytest.approx(2 / 3)
    assert s.n == 3 and s.degenerate == 1
    assert s.cis == pytest.approx((1.0 + 0.5) / 2)
    assert s.cis_values == pytest.approx((1.0, 0.5))
    with pytest.raises(ValueError):
        score_selections("X", cases, [1])


def test_score_selections_clairvoyant_is_perfect():
    rng = np.random.default_rng(0)
    cases = [_case(rng.uniform(0, 1, 5)) for _ in range(200)]
    best = [min(c.candidates, key=lambda i: c.outcome[i]) for c in cases]
    s = score_selections("CV", cases, best)
    assert s.accuracy == 1.0
    assert all(v == 1.0 for v in s.cis_values)


def test_bootstrap_ordering():
    vals = {"A": np.full(30, 0.9), "B": np.full(30, 0.5), "C": np.full(30, 0.1)}
    assert bootstrap_ordering(vals, ["A", "B", "C"]) == 1.0
    assert bootstrap_ordering(vals, ["C", "B", "A"]) == 0.0
    rng = np.random.default_rng(1)
    noisy = {"A": rng.normal(0, 1, 40), "B": rng.normal(0, 1, 40)}
    f = bootstrap_ordering(noisy, ["A", "B"], n_resamples=500, seed=3)
    assert f == bootstrap_ordering(noisy, ["A", "B"], n_resamples=500, seed=3)
    assert 0 < f < 1
    with pytest.raises(ValueError):
        bootstrap_ordering({"A": [1, 2], "B": [1]}, ["A", "B"])


def _log(kind, kpi, lifi=None):
    T = len(kpi)
    return ExperimentLog(kind, k=list(range(T)), position=[1] * T, kpi=list(kpi),
                         collision=[0.1] * T, lifi_served=list(lifi if lifi is not None else [1.0] * T))


def test_constant_models_normalise_to_extremes():
    logs = {"HI": [_log("HI", [90.0] * 6)] * 2, "LO": [_log("LO", [10.0] * 6)] * 2}
    curves, summary = aggregate_experiments(logs, T_e=2, reference="HI")
    assert np.all(curves["HI"] == 1.0) and np.all(curves["LO"] == 0.0)
    s = {x.model: x for x in summary}
    assert s["HI"].kpi == 1.0 and s["LO"].kpi == 0.0
    assert s["HI"].lifi == 1.0


def test_aggregate_replica_permutation():
    rng = np.random.default_rng(5)
    reps = {m: [_log(m, rng.uniform(0, 100, 8), rng.uniform(0, 5, 8)) for _ in range(3)]
            for m in ("A", "B", "OPTIMAL")}
    c1, s1 = aggregate_experiments(reps, T_e=3)
    perm = {m: v[::-1] for m, v in reps.items()}
    c2, s2 = aggregate_experiments(perm, T_e=3)
    for m in reps:
        assert np.allclose(c1[m], c2[m])
    for a, b in zip(s1, s2):
        assert a.kpi == pytest.approx(b.kpi) and a.lifi == pytest.approx(b.lifi)


def test_normalized_curves_errors():
    with pytest.raises(ValueError):
        normalized_curves({"A": [[1, 2]], "B": [[1, 2], [3, 4]]})
    with pytest.raises(ValueError):
        normalized_curves({"A": [[1, 2]], "B": [[1, 2, 3]]})


def test_report_headers(tmp_path):
    s = score_selections("X", [_case([0.4, 0.0, 0.2])], [1])
    write_simulation_report([s], tmp_path / "sim.csv")
    rows = list(csv.reader(open(tmp_path / "sim.csv")))
    assert rows[0] == ["model", "accuracy", "accuracy_se", "cis", "cis_se", "n", "degenerate"]
    assert rows[1][0] == "X" and float(rows[1][3]) == 1.0

    logs = {"A": [_log("A", [1.0, 2.0, 3.0])], "OPTIMAL": [_log("OPTIMAL", [3.0, 3.0, 3.0])]}
    curves, summary = aggregate_experiments(logs, T_e=0)
    write_experiment_report(summary, tmp_path / "exp.csv")
    write_curves(curves, tmp_path / "curves.csv")
    assert open(tmp_path / "exp.csv").readline().strip() == "model,KPI,CP,LiFi,switches"
    rows = list(csv.reader(open(tmp_path / "curves.csv")))
    assert rows[0] == ["k", "model", "r_bar"] and len(rows) == 1 + 3 * 2
    assert not math.isnan(float(rows[-1][2]))
