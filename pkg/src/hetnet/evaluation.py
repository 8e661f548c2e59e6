"""Scores, normalisation and report tables for both studies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class DegeneratePeriod(ValueError):
    """Raised by :func:`cis` when no offload improves on the no-offload KPI."""


def cis(p0: float, pp: float, pcv: float) -> float:
    """Collision improvement score ``(p0 - pp) / (p0 - pcv)``."""
    if pcv > p0:
        raise ValueError("clairvoyant KPI must not exceed the no-offload KPI")
    if p0 == pcv:
        raise DegeneratePeriod("degenerate period: p0 == pcv")
    return (p0 - pp) / (p0 - pcv)


def prediction_accuracy(selections, clairvoyant_selections) -> float:
    selections = list(selections)
    clairvoyant_selections = list(clairvoyant_selections)
    if len(selections) != len(clairvoyant_selections):
        raise ValueError("selections and clairvoyant selections differ in length")
    if not selections:
        raise ValueError("no selections")
    return sum(a == b for a, b in zip(selections, clairvoyant_selections)) / len(selections)


def normalize_performance(f: dict) -> dict:
    """Min-max scale the KPI of every model at one sample; 0.5 when all tie."""
    if len(f) < 2:
        raise ValueError("need at least 2 models")
    lo, hi = min(f.values()), max(f.values())
    if hi == lo:
        return {m: 0.5 for m in f}
    return {m: (v - lo) / (hi - lo) for m, v in f.items()}


def running_average(r) -> np.ndarray:
    """``out[0] = r[0]``; ``out[k]`` is the mean of ``r[0..k-1]``."""
    r = np.asarray(r, dtype=float)
    if r.size == 0:
        raise ValueError("empty sequence")
    out = np.empty_like(r)
    out[0] = r[0]
    out[1:] = np.cumsum(r)[:-1] / np.arange(1, r.size)
    return out


# --------------------------------------------------------------------------
# simulation study


@dataclass(frozen=True)
class PredictorScore:
    model: str
    accuracy: float
    accuracy_se: float
    cis: float
    cis_se: float
    n: int
    degenerate: int
    cis_values: tuple = ()
    picks: tuple = ()


def _se(v):
    v = np.asarray(v, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def score_selections(model: str, test_cases, picks, objective: str = "minimize") -> PredictorScore:
    """Accuracy and cis of one predictor's picks over the test decisions.

    ``test_cases`` carry ``outcome`` (state index -> realised KPI, state 0
    being no offload) and ``candidates``. Degenerate decisions (no
    candidate beats no offload) are left out of the cis mean and counted.
    """
    test_cases = list(test_cases)
    picks = list(picks)
    if len(picks) != len(test_cases):
        raise ValueError("one pick per test case required")
    sign = 1.0 if objective == "minimize" else -1.0
    hits, scores, degenerate = [], [], 0
    for tc, pick in zip(test_cases, picks):
        best = min(tc.candidates, key=lambda c: (sign * tc.outcome[c], c))
        hits.append(float(tc.outcome[pick] == tc.outcome[best]))
        p0, pp, pcv = (sign * tc.outcome[0], sign * tc.outcome[pick], sign * tc.outcome[best])
        try:
            scores.append(cis(p0, pp, pcv))
        except DegeneratePeriod:
            degenerate += 1
        except ValueError:
            # clairvoyant offload worse than none: nothing to gain
            degenerate += 1
    return PredictorScore(model, float(np.mean(hits)), _se(hits),
                          float(np.mean(scores)) if scores else float("nan"), _se(scores),
                          len(test_cases), degenerate, tuple(scores), tuple(picks))


def write_simulation_report(scores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "accuracy", "accuracy_se", "cis", "cis_se", "n", "degenerate"])
        for s in scores:
            w.writerow([s.model, repr(s.accuracy), repr(s.accuracy_se), repr(s.cis),
                        repr(s.cis_se), s.n, s.degenerate])


def bootstrap_ordering(values: dict, order, n_resamples: int = 200, seed=0) -> float:
    """Fraction of paired bootstrap resamples in which the means follow ``order``.

    ``values`` maps model -> per-case scores (aligned across models);
    ``order`` lists models from best to worst.
    """
    arrays = [np.asarray(values[m], dtype=float) for m in order]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("score vectors must be aligned")
    idx = np.random.default_rng(seed).integers(0, n, (n_resamples, n))
    means = [a[idx].mean(axis=1) for a in arrays]
    ok = np.ones(n_resamples, dtype=bool)
    for hi, lo in zip(means, means[1:]):
        ok &= hi > lo
    return float(ok.mean())


# --------------------------------------------------------------------------
# experiment study


@dataclass(frozen=True)
class ExperimentSummary:
    model: str
    kpi: float  # running-average normalised KPI at the last sample, mean over replicas
    collision: float
    lifi: float  # mean LiFi traffic relative to the OPTIMAL reference
    switches: float  # post-exploration position changes, mean over replicas


def normalized_curves(series: dict) -> dict:
    """Per-sample normalisation across models, then running averages.

    ``series`` maps model -> list over replicas of KPI arrays (same length
    everywhere). Returns model -> ``r_bar(k)`` averaged over replicas.
    """
    models = list(series)
    n_rep = {len(v) for v in series.values()}
    if len(n_rep) != 1:
        raise ValueError("every model needs the same number of replicas")
    n_rep = n_rep.pop()
    lengths = {len(np.asarray(a)) for v in series.values() for a in v}
    if len(lengths) != 1:
        raise ValueError("mismatched log lengths")
    T = lengths.pop()
    curves = {m: np.zeros(T) for m in models}
    for e in range(n_rep):
        f = np.array([np.asarray(series[m][e], dtype=float) for m in models])  # (M, T)
        lo, hi = f.min(axis=0), f.max(axis=0)
        span = hi - lo
        r = np.where(span > 0, (f - lo) / np.where(span > 0, span, 1.0), 0.5)
        for i, m in enumerate(models):
            curves[m] += running_average(r[i])
    return {m: c / n_rep for m, c in curves.items()}


def aggregate_experiments(logs: dict, T_e: int, reference: str = "OPTIMAL"):
    """Curves and summary table from ``logs``: model -> list of replica logs.

    Only samples with ``k >= T_e`` are scored. The LiFi multiplier divides
    a model's mean LiFi-served traffic by that of ``reference``.
    """
    kpis, cols, lifis = {}, {}, {}
    for m, reps in logs.items():
        kpis[m], cols[m], lifis[m] = [], [], []
        for log in reps:
            kpi, col, lifi = log.post_exploration(T_e)
            kpis[m].append(kpi)
            cols[m].append(col)
            lifis[m].append(lifi)
    curves = normalized_curves(kpis)
    ref = float(np.mean(np.concatenate(lifis[reference]))) if reference in lifis else float("nan")
    summary = []
    for m in logs:
        mean_lifi = float(np.mean(np.concatenate(lifis[m])))
        summary.append(ExperimentSummary(
            m, float(curves[m][-1]), float(np.mean(np.concatenate(cols[m]))),
            mean_lifi / ref if ref > 0 else float("nan"),
            float(np.mean([log.switches_after(T_e) for log in logs[m]])),
        ))
    return curves, summary


def write_experiment_report(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "KPI", "CP", "LiFi", "switches"])
        for s in summary:
            w.writerow([s.model, repr(s.kpi), repr(s.collision), repr(s.lifi), repr(s.switches)])


def write_curves(curves: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "model", "r_bar"])
        T = len(next(iter(curves.values())))
        for k in range(T):
            for m, c in curves.items():
                w.writerow([k + 1, m, repr(float(c[k]))])
