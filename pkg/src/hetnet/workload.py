"""Seeded synthetic workload traces.

Each station gets a time series of (upload, download) rates in Mbps laid out
as epochs grouped into periods. Rates only change at period boundaries.
Every station also carries a fixed ``link_rate``: its PHY rate relative to
the reference rate, which scales how much airtime one Mbps costs.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

CANDIDATE = "candidate"
BACKGROUND = "background"


@dataclass(frozen=True)
class WorkloadTrace:
    station: str
    epochs: np.ndarray  # shape (n_epochs, 2): up, down in Mbps
    epochs_per_period: int
    epoch_duration: float = 2.0
    role: str = CANDIDATE
    link_rate: float = 1.0

    def __post_init__(self):
        if not 0 < self.link_rate <= 1:
            raise ValueError("link_rate must be in (0, 1]")
        epochs = np.asarray(self.epochs, dtype=float)
        if epochs.ndim != 2 or epochs.shape[1] != 2:
            raise ValueError("epochs must have shape (n_epochs, 2)")
        if self.epochs_per_period < 1 or len(epochs) % self.epochs_per_period:
            raise ValueError("epoch count must be a multiple of epochs_per_period")
        if np.any(epochs < 0) or not np.all(np.isfinite(epochs)):
            raise ValueError("rates must be finite and non-negative")
        object.__setattr__(self, "epochs", epochs)

    @property
    def n_periods(self) -> int:
        return len(self.epochs) // self.epochs_per_period

    def period_rates(self) -> np.ndarray:
        """(n_periods, 2) array of per-period (up, down) rates."""
        return self.epochs[:: self.epochs_per_period].copy()

    @classmethod
    def from_period_rates(cls, station, rates, epochs_per_period, **kwargs):
        rates = np.asarray(rates, dtype=float)
        return cls(station, np.repeat(rates, epochs_per_period, axis=0), epochs_per_period, **kwargs)


@dataclass(frozen=True)
class TraceEnsembleConfig:
    n_candidates: int = 4
    n_background: int = 4
    candidate_load_factor: float = 0.8
    epochs: int = 100
    epochs_per_period: int = 10
    epoch_duration: float = 2.0
    rate_cap: float = 100.0
    # (log-mean, log-sd) of the per-period rate, for (up, down)
    rate_distribution: tuple = field(
        default=((math.log(20.0), 0.8), (math.log(20.0), 0.8))
    )
    # relative PHY rate per station, log-uniform on [lo, hi]
    link_rate_range: tuple = (0.2, 1.0)

    def __post_init__(self):
        if not 0 < self.candidate_load_factor <= 1:
            raise ValueError("candidate_load_factor must be in (0, 1]")
        for name in ("n_candidates", "n_background", "epochs", "epochs_per_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs % self.epochs_per_period:
            raise ValueError("epochs must be a multiple of epochs_per_period")
        if self.rate_cap <= 0:
            raise ValueError("rate_cap must be positive")
        dist = tuple(tuple(float(v) for v in pair) for pair in self.rate_distribution)
        if len(dist) != 2 or any(len(pair) != 2 for pair in dist):
            raise ValueError("rate_distribution must be ((mu, sd), (mu, sd)) for up and down")
        if any(sd <= 0 for _, sd in dist):
            raise ValueError("rate_distribution log-sd must be positive")
        object.__setattr__(self, "rate_distribution", dist)
        lo, hi = (float(v) for v in self.link_rate_range)
        if not 0 < lo <= hi <= 1:
            raise ValueError("link_rate_range must satisfy 0 < lo <= hi <= 1")
        object.__setattr__(self, "link_rate_range", (lo, hi))

    @property
    def n_periods(self) -> int:
        return self.epochs // self.epochs_per_period

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rate_distribution"] = [list(p) for p in self.rate_distribution]
        d["link_rate_range"] = list(self.link_rate_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEnsembleConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown workload config key(s): {sorted(unknown)}")
        d = dict(d)
        if "link_rate_range" in d:
            d["link_rate_range"] = tuple(d["link_rate_range"])
        if "rate_distribution" in d:
            d["rate_distribution"] = tuple(tuple(p) for p in d["rate_distribution"])
        return cls(**d)


def generate_ensemble(config: TraceEnsembleConfig, seed) -> list[WorkloadTrace]:
    """Draw one trace per station: candidates first, then background.

    Per-period rates are i.i.d. log-normal, clipped to ``[0, rate_cap]``;
    candidate draws are multiplied by ``candidate_load_factor``. Link rates
    are drawn after the rates, log-uniform on ``link_rate_range``.
    """
    rng = np.random.default_rng(seed)
    mus = np.array([p[0] for p in config.rate_distribution])
    sds = np.array([p[1] for p in config.rate_distribution])
    n_sta = config.n_candidates + config.n_background
    draws = np.exp(mus + sds * rng.standard_normal((n_sta, config.n_periods, 2)))
    draws[: config.n_candidates] *= config.candidate_load_factor
    np.clip(draws, 0.0, config.rate_cap, out=draws)
    lo, hi = config.link_rate_range
    links = np.exp(rng.uniform(math.log(lo), math.log(hi), n_sta))
    links = np.clip(links, lo, hi)

    traces = []
    for i in range(n_sta):
        if i < config.n_candidates:
            station, role = f"c{i + 1}", CANDIDATE
        else:
            station, role = f"b{i - config.n_candidates + 1}", BACKGROUND
        traces.append(
            WorkloadTrace.from_period_rates(
                station, draws[i], config.epochs_per_period,
                epoch_duration=config.epoch_duration, role=role,
                link_rate=float(links[i]),
            )
        )
    return traces


def smooth_trace(trace: WorkloadTrace, window: int = 5) -> WorkloadTrace:
    """Trailing mean of period rates over up to ``window`` most recent periods."""
    if window < 1:
        raise ValueError("window must be >= 1")
    rates = trace.period_rates()
    csum = np.vstack([np.zeros((1, 2)), np.cumsum(rates, axis=0)])
    idx = np.arange(1, len(rates) + 1)
    lo = np.maximum(idx - window, 0)
    smoothed = (csum[idx] - csum[lo]) / (idx - lo)[:, None]
    return replace(trace, epochs=np.repeat(smoothed, trace.epochs_per_period, axis=0))


def smooth_ensemble(traces, window: int = 5) -> list[WorkloadTrace]:
    return [smooth_trace(t, window) for t in traces]


def candidates(traces) -> list[str]:
    return [t.station for t in traces if t.role == CANDIDATE]


def write_ensemble_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station", "epoch", "up_mbps", "down_mbps", "link_rate"])
        for t in traces:
            link = repr(float(t.link_rate))
            for e, (up, down) in enumerate(t.epochs):
                w.writerow([t.station, e, repr(float(up)), repr(float(down)), link])


def read_ensemble_csv(path, epochs_per_period: int = 10, epoch_duration: float = 2.0):
    """Inverse of :func:`write_ensemble_csv`.

    Roles are recovered from the station id: ids starting with ``b`` are
    background stations, everything else is a candidate. Files without a
    ``link_rate`` column get link rate 1.
    """
    rows: dict[str, list] = {}
    links: dict[str, float] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["station"], []).append(
                (int(rec["epoch"]), float(rec["up_mbps"]), float(rec["down_mbps"]))
            )
            link = float(rec.get("link_rate") or 1.0)
            if links.setdefault(rec["station"], link) != link:
                raise ValueError(f"station {rec['station']}: link_rate varies between rows")
    traces = []
    for station, recs in rows.items():
        recs.sort()
        if [r[0] for r in recs] != list(range(len(recs))):
            raise ValueError(f"station {station}: epochs are not contiguous from 0")
        role = BACKGROUND if station.startswith("b") else CANDIDATE
        traces.append(
            WorkloadTrace(station, np.array([r[1:] for r in recs]), epochs_per_period,
                          epoch_duration=epoch_duration, role=role, link_rate=links[station])
        )
    return traces


def load_config(path) -> TraceEnsembleConfig:
    return TraceEnsembleConfig.from_dict(json.loads(Path(path).read_text()))
