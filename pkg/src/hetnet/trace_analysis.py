"""Packet-trace analysis: retry segments, Negative Impact Scores, metric screening.

A trace is cut into equal time segments. When exactly one user enters (or
leaves) between two adjacent segments and nobody else changes state, the
change in the overall retry probability is attributed to that user. The
Negative Impact Score (NIS) of a user adds the magnitudes of its mean entry
and departure deltas.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as _stats

UPLINK = "uplink"
DOWNLINK = "downlink"
METRICS = ("rx", "tx", "size", "rssi", "phyrate", "packets", "iat", "retries")
TRACE_COLUMNS = ("timestamp", "src", "dst", "direction", "size", "retry", "rssi", "phyrate")
NIS_COLUMNS = ("user", "mu_e", "mu_d", "n", "m", "nis", "rank", "confidence")


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src: str
    dst: str
    direction: str
    size: int
    retry: bool
    rssi: float | None = None
    phyrate: float | None = None

    def __post_init__(self):
        if not (self.timestamp >= 0 and math.isfinite(self.timestamp)):
            raise ValueError(f"timestamp must be finite and >= 0, got {self.timestamp}")
        if self.direction not in (UPLINK, DOWNLINK):
            raise ValueError(f"direction must be {UPLINK!r} or {DOWNLINK!r}")
        if self.size < 0:
            raise ValueError("size must be >= 0")

    @property
    def user(self) -> str:
        """The station end of the frame (the non-AP endpoint)."""
        return self.src if self.direction == UPLINK else self.dst


@dataclass(frozen=True)
class SegmentStats:
    index: int
    retry_prob: float
    active_users: frozenset
    entered: frozenset
    departed: frozenset
    n_frames: int = 0


@dataclass(frozen=True)
class NisScore:
    user: str
    mu_e_hat: float
    mu_d_hat: float
    n_entries: int
    n_departures: int
    nis: float

    @property
    def confidence(self) -> str:
        # a component estimated from zero events was filled in with 0
        return "high" if self.n_entries and self.n_departures else "low"


@dataclass(frozen=True)
class StationMetrics:
    rx: float
    tx: float
    size: float
    rssi: float | None
    phyrate: float | None
    packets: int
    iat: float
    retries: float

    def get(self, name: str):
        if name not in METRICS:
            raise KeyError(f"unknown metric {name!r}")
        return getattr(self, name)


# --------------------------------------------------------------------------
# segmentation and NIS


def _check_sorted(records):
    if not records:
        raise ValueError("empty trace")
    ts = [r.timestamp for r in records]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("unsorted trace")


def segment_trace(records: Sequence[PacketRecord], segment_duration: float = 60.0):
    """Per-segment retry probability and user entries/departures.

    Segment ``t`` (1-based) covers ``[(t-1)*d, t*d)``. Only segments holding
    at least one frame are returned; entries and departures are taken
    against the immediately preceding segment index, so a user is entered
    after an empty segment as well.
    """
    if segment_duration <= 0:
        raise ValueError("segment_duration must be positive")
    records = list(records)
    _check_sorted(records)

    buckets: dict[int, list] = {}
    for r in records:
        idx = int(math.floor(r.timestamp / segment_duration)) + 1
        b = buckets.setdefault(idx, [0, 0, set()])
        b[0] += 1
        b[1] += bool(r.retry)
        b[2].add(r.user)

    out = []
    for idx in sorted(buckets):
        total, retried, users = buckets[idx]
        prev = buckets.get(idx - 1, (0, 0, set()))[2]
        out.append(SegmentStats(
            index=idx,
            retry_prob=retried / total,
            active_users=frozenset(users),
            entered=frozenset(users - prev),
            departed=frozenset(prev - users),
            n_frames=total,
        ))
    return out


def compute_nis(segments: Sequence[SegmentStats]) -> dict[str, NisScore]:
    """NIS of every user with at least one attributable entry or departure."""
    segments = list(segments)
    if len(segments) < 2:
        raise ValueError("need at least 2 segments")
    entries: dict[str, list] = {}
    departures: dict[str, list] = {}
    for prev, cur in zip(segments, segments[1:]):
        if cur.index != prev.index + 1:
            continue
        delta = cur.retry_prob - prev.retry_prob
        if len(cur.entered) == 1 and not cur.departed:
            entries.setdefault(next(iter(cur.entered)), []).append(delta)
        elif len(cur.departed) == 1 and not cur.entered:
            departures.setdefault(next(iter(cur.departed)), []).append(delta)

    scores = {}
    for user in sorted(set(entries) | set(departures)):
        e = entries.get(user, [])
        d = departures.get(user, [])
        mu_e = sum(e) / len(e) if e else 0.0
        mu_d = sum(d) / len(d) if d else 0.0
        scores[user] = NisScore(user, mu_e, mu_d, len(e), len(d), abs(mu_e) + abs(mu_d))
    return scores


def rank_nis(scores) -> list[NisScore]:
    """Scores sorted by NIS, highest first; ties by user id."""
    values = scores.values() if isinstance(scores, dict) else scores
    return sorted(values, key=lambda s: (-s.nis, s.user))


# --------------------------------------------------------------------------
# station measurements


def station_metrics(records: Sequence[PacketRecord], user: str) -> StationMetrics:
    """Per-station measurements over the station's own active span.

    With ``n`` frames spread over ``first..last`` the span is
    ``(last - first) * n / (n - 1)``, i.e. each frame accounts for one mean
    inter-arrival gap. A lone frame gets a 1 s span and ``iat`` 0.
    """
    mine = [r for r in records if r.user == user]
    if not mine:
        raise KeyError(f"no frames for user {user!r}")
    n = len(mine)
    ts = np.array([r.timestamp for r in mine])
    first, last = float(ts.min()), float(ts.max())
    if n > 1 and last > first:
        span = (last - first) * n / (n - 1)
    else:
        span = 1.0
    iat = float(np.mean(np.diff(np.sort(ts)))) if n > 1 else 0.0
    up = sum(r.size for r in mine if r.direction == UPLINK)
    down = sum(r.size for r in mine if r.direction == DOWNLINK)
    rssi = [r.rssi for r in mine if r.rssi is not None]
    phy = [r.phyrate for r in mine if r.phyrate is not None]
    return StationMetrics(
        rx=down / span,
        tx=up / span,
        size=float(np.mean([r.size for r in mine])),
        rssi=float(np.mean(rssi)) if rssi else None,
        phyrate=float(np.mean(phy)) if phy else None,
        packets=n,
        iat=iat,
        retries=sum(bool(r.retry) for r in mine) / n,
    )


def all_station_metrics(records) -> dict[str, StationMetrics]:
    users = sorted({r.user for r in records})
    return {u: station_metrics(records, u) for u in users}


# --------------------------------------------------------------------------
# screening and class prediction


def tercile_classes(nis) -> dict[str, int]:
    """Class 0 for the top third of users by NIS, 1 for the rest.

    The top group holds the ``round(n/3)`` highest scores (at least one)
    plus everybody tied with the lowest of them.
    """
    values = {u: (s.nis if isinstance(s, NisScore) else float(s)) for u, s in nis.items()}
    if not values:
        return {}
    ordered = sorted(values.values(), reverse=True)
    k = max(1, int(round(len(ordered) / 3)))
    cut = ordered[k - 1]
    return {u: 0 if v >= cut else 1 for u, v in values.items()}


def f_oneway(*groups) -> tuple[float, float, bool]:
    """One-way ANOVA. Returns ``(F, p, degenerate)``.

    ``degenerate`` flags zero within-group variance: then ``F`` is ``inf``
    with ``p = 0`` if the group means differ, else ``F = 0`` and ``p = 1``.
    """
    groups = [np.asarray(g, dtype=float) for g in groups]
    k = len(groups)
    n = sum(len(g) for g in groups)
    if k < 2 or any(len(g) < 1 for g in groups) or n <= k:
        raise ValueError("degenerate grouping")
    grand = np.concatenate(groups).mean()
    # centre each group on its own mean first; keeps F shift-invariant in floats
    ss_between = float(sum(len(g) * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    df_b, df_w = k - 1, n - k
    scale = max(float(np.max(np.abs(np.concatenate(groups) - grand))), 1e-300)
    if ss_within <= (1e-12 * scale) ** 2 * n:
        if ss_between <= (1e-12 * scale) ** 2 * n:
            return 0.0, 1.0, True
        return math.inf, 0.0, True
    f = (ss_between / df_b) / (ss_within / df_w)
    p = float(_stats.f.sf(f, df_b, df_w))
    return float(f), min(max(p, 0.0), 1.0), False


@dataclass(frozen=True)
class AnovaResult:
    metric: str
    f: float
    p: float
    significant: bool
    degenerate: bool = False


def anova_screen(metrics: dict, nis: dict, metric_names: Iterable[str] = METRICS,
                 alpha: float = 0.05) -> list[AnovaResult]:
    """Top-tercile vs rest one-way ANOVA for every metric, best (lowest p) first.

    Only users with both a metric record and a NIS take part. Metrics that
    no user reports (e.g. rssi in a capture without radio headers) are
    skipped.
    """
    users = sorted(set(metrics) & set(nis))
    classes = tercile_classes({u: nis[u] for u in users})
    results = []
    for name in metric_names:
        top, rest = [], []
        for u in users:
            v = metrics[u].get(name) if isinstance(metrics[u], StationMetrics) else metrics[u].get(name)
            if v is None or not math.isfinite(v):
                continue
            (top if classes[u] == 0 else rest).append(float(v))
        if not top and not rest:
            continue
        if len(top) < 2 or len(rest) < 2:
            raise ValueError(f"degenerate grouping for metric {name!r}: "
                             f"{len(top)} top vs {len(rest)} rest")
        f, p, flag = f_oneway(top, rest)
        results.append(AnovaResult(name, f, p, p < alpha, flag))
    results.sort(key=lambda r: (r.p, -r.f if math.isfinite(r.f) else -math.inf, r.metric))
    return results


@dataclass(frozen=True)
class TercileResult:
    model_mean: float
    model_halfwidth: float
    random_mean: float
    random_halfwidth: float
    model_rates: tuple
    random_rates: tuple
    fallback_rounds: tuple  # rounds in which some prediction used the majority class


def _loo_predictions(x, cls):
    """Leave-one-out least-squares class predictions, plus fallback flags."""
    n = len(x)
    preds = np.empty(n, dtype=int)
    fallback = np.zeros(n, dtype=bool)
    for i in range(n):
        xs = np.delete(x, i)
        ys = np.delete(cls, i).astype(float)
        if len(np.unique(xs)) < 2:
            fallback[i] = True
            preds[i] = 0 if np.mean(ys == 0) > 0.5 else 1
            continue
        A = np.column_stack([np.ones_like(xs), xs])
        coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
        yhat = coef[0] + coef[1] * x[i]
        preds[i] = 0 if yhat < 0.5 else 1
    return preds, fallback


def tercile_prediction_study(metrics: dict, nis: dict, top_metric: str, rounds: int = 30,
                             users_per_round: int = 100, seed=0) -> TercileResult:
    """Predict each held-out user's NIS tercile class from one metric.

    Each round draws ``users_per_round`` users (with replacement); a user's
    class is predicted by least squares of class on ``top_metric`` fitted
    on all other users and rounded at 0.5. The random baseline says 0 with
    probability 1/3. Means and ``1.96 * sd`` half-widths are over rounds.
    """
    if rounds < 1 or users_per_round < 1:
        raise ValueError("rounds and users_per_round must be >= 1")
    users = sorted(set(metrics) & set(nis))
    if len(users) < 3:
        raise ValueError("need at least 3 users")
    classes = tercile_classes({u: nis[u] for u in users})

    def value(u):
        m = metrics[u]
        v = m.get(top_metric) if hasattr(m, "get") else m[top_metric]
        if v is None:
            raise ValueError(f"user {u!r} lacks metric {top_metric!r}")
        return float(v)

    x = np.array([value(u) for u in users])
    cls = np.array([classes[u] for u in users])
    preds, fallback = _loo_predictions(x, cls)

    rng = np.random.default_rng(seed)
    model_rates, random_rates, fb_rounds = [], [], []
    for k in range(rounds):
        pick = rng.integers(0, len(users), users_per_round)
        guess = np.where(rng.random(users_per_round) < 1.0 / 3.0, 0, 1)
        model_rates.append(float(np.mean(preds[pick] == cls[pick])))
        random_rates.append(float(np.mean(guess == cls[pick])))
        if fallback[pick].any():
            fb_rounds.append(k)

    def summary(v):
        v = np.asarray(v)
        sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        return float(v.mean()), 1.96 * sd

    mm, mh = summary(model_rates)
    rm, rh = summary(random_rates)
    return TercileResult(mm, mh, rm, rh, tuple(model_rates), tuple(random_rates), tuple(fb_rounds))


# --------------------------------------------------------------------------
# synthetic data


def synthetic_trace(seed, n_segments: int = 300, n_users: int = 10, planted: str = "u0",
                    planted_impact: float = 0.075, background_impact: float = 0.004,
                    base_retry: float = 0.05, frames_per_user: int = 30,
                    switch_prob: float = 0.04, segment_duration: float = 60.0):
    """Frame trace in which one user raises the retry probability while active.

    Users toggle between active and idle with probability ``switch_prob``
    per segment. Each active user sends ``frames_per_user`` frames per
    segment; every frame is retried with probability ``base_retry`` plus the
    summed impact of all active users (``planted_impact`` for ``planted``,
    ``background_impact`` for the others).
    """
    rng = np.random.default_rng(seed)
    names = [planted] + [f"u{i}" for i in range(n_users) if f"u{i}" != planted][: n_users - 1]
    impact = np.array([planted_impact] + [background_impact] * (len(names) - 1))
    active = rng.random(len(names)) < 0.5
    records = []
    for t in range(n_segments):
        if t:
            active ^= rng.random(len(names)) < switch_prob
        who = np.flatnonzero(active)
        if not len(who):
            continue
        r = min(1.0, base_retry + float(impact[who].sum()))
        start = t * segment_duration
        for i in who:
            ts = np.sort(start + rng.random(frames_per_user) * segment_duration)
            retry = rng.random(frames_per_user) < r
            up = rng.random(frames_per_user) < 0.5
            size = rng.integers(60, 1500, frames_per_user)
            for k in range(frames_per_user):
                if up[k]:
                    records.append(PacketRecord(float(ts[k]), names[i], "ap", UPLINK,
                                                int(size[k]), bool(retry[k])))
                else:
                    records.append(PacketRecord(float(ts[k]), "ap", names[i], DOWNLINK,
                                                int(size[k]), bool(retry[k])))
    records.sort(key=lambda r: r.timestamp)
    return records


def synthetic_population(n_users: int, rho: float, seed):
    """Users whose single metric ``size`` correlates with NIS at ``rho``.

    Returns ``(metrics, nis)`` keyed by user id; ``nis`` values are floats.
    """
    if not -1 <= rho <= 1:
        raise ValueError("rho must be in [-1, 1]")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_users, 2))
    score = z[:, 0]
    metric = rho * z[:, 0] + math.sqrt(1 - rho**2) * z[:, 1]
    metrics, nis = {}, {}
    for i in range(n_users):
        u = f"u{i:03d}"
        metrics[u] = {"size": float(metric[i])}
        nis[u] = float(np.exp(0.5 * score[i]) * 0.05)
    return metrics, nis


# --------------------------------------------------------------------------
# file formats


def _opt_float(text):
    text = (text or "").strip()
    return float(text) if text else None


def read_trace_csv(path) -> list[PacketRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trace CSV lacks column(s) {sorted(missing)}")
        out = []
        for line, rec in enumerate(reader, start=2):
            if rec["retry"] not in ("0", "1"):
                raise ValueError(f"line {line}: retry must be 0 or 1")
            out.append(PacketRecord(
                float(rec["timestamp"]), rec["src"], rec["dst"], rec["direction"],
                int(rec["size"]), rec["retry"] == "1",
                _opt_float(rec["rssi"]), _opt_float(rec["phyrate"]),
            ))
    return out


def write_trace_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([repr(r.timestamp), r.src, r.dst, r.direction, r.size, int(bool(r.retry)),
                        "" if r.rssi is None else repr(r.rssi),
                        "" if r.phyrate is None else repr(r.phyrate)])


def write_nis_csv(scores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NIS_COLUMNS)
        for rank, s in enumerate(rank_nis(scores), start=1):
            w.writerow([s.user, repr(s.mu_e_hat), repr(s.mu_d_hat), s.n_entries,
                        s.n_departures, repr(s.nis), rank, s.confidence])


def write_anova_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "f", "p", "significant", "degenerate"])
        for r in results:
            w.writerow([r.metric, repr(r.f), repr(r.p), int(r.significant), int(r.degenerate)])


def metrics_field_names():
    return [f.name for f in fields(StationMetrics)]
