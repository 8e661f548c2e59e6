"""Slotted contention model of a shared Wi-Fi channel plus a LiFi side link.

Every station transmits in a slot with probability ``tau`` proportional to the
airtime its offered load needs (load over link rate, capped at ``tau_max``).
A transmission collides when any other station transmits in the same slot.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .workload import smooth_ensemble

NO_OFFLOAD = "none"


@dataclass(frozen=True)
class ChannelConfig:
    capacity_ref: float = 3000.0
    tau_max: float = 0.9
    lifi_capacity: float = 100.0
    noise_sd: float = 0.01
    slots_per_period: int = 0  # 0: closed form, >0: slot-level Monte Carlo
    smoothing_window: int = 5

    def __post_init__(self):
        if not 0 < self.tau_max <= 1:
            raise ValueError("tau_max must be in (0, 1]")
        if self.capacity_ref <= 0:
            raise ValueError("capacity_ref must be positive")
        if self.lifi_capacity < 0 or self.noise_sd < 0 or self.slots_per_period < 0:
            raise ValueError("lifi_capacity, noise_sd and slots_per_period must be >= 0")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown channel config key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class StaPeriodStats:
    collision_prob: float
    served_up: float
    served_down: float
    retries: float
    link_rate: float = 1.0


@dataclass(frozen=True)
class PeriodStats:
    per_sta: dict
    collision_kpi: float
    air: float
    lifi_served: float
    offloaded: str = NO_OFFLOAD


def transmit_probs(loads, config: ChannelConfig, link_rates=None) -> np.ndarray:
    loads = np.asarray(loads, dtype=float)
    if np.any(loads < 0):
        raise ValueError("loads must be non-negative")
    scale = config.capacity_ref
    if link_rates is not None:
        link_rates = np.asarray(link_rates, dtype=float)
        if np.any(link_rates <= 0):
            raise ValueError("link rates must be positive")
        scale = scale * link_rates
    return np.minimum(config.tau_max, loads / scale)


def _collision_from_taus(taus):
    taus = np.asarray(taus, dtype=float)
    idle = 1.0 - taus
    if len(taus) == 0:
        return taus, 0.0
    # product over j != i, without dividing by (1 - tau_i) which may be 0
    prefix = np.concatenate([[1.0], np.cumprod(idle)[:-1]])
    suffix = np.concatenate([np.cumprod(idle[::-1])[::-1][1:], [1.0]])
    p = 1.0 - prefix * suffix
    total = taus.sum()
    kpi = float(taus @ p / total) if total > 0 else 0.0
    return p, kpi


def collision_profile(loads: dict, config: ChannelConfig, links: dict | None = None):
    """Per-station collision probability and the traffic-weighted collision KPI."""
    names = list(loads)
    link = None if links is None else [links.get(n, 1.0) for n in names]
    taus = transmit_probs([loads[n] for n in names], config, link)
    p, kpi = _collision_from_taus(taus)
    return dict(zip(names, p.tolist())), kpi


def airtime(loads, config: ChannelConfig, links: dict | None = None) -> float:
    """Channel busy percentage, 100 * (1 - prod(1 - tau))."""
    if isinstance(loads, dict):
        names = list(loads)
        vals = [loads[n] for n in names]
        link = None if links is None else [links.get(n, 1.0) for n in names]
    else:
        vals, link = loads, None
    taus = transmit_probs(vals, config, link)
    return float(100.0 * (1.0 - np.prod(1.0 - taus)))


def monte_carlo_collisions(taus, n_slots: int, rng) -> tuple[np.ndarray, float]:
    """Slot-level estimate of per-station collision probability.

    Each slot every station transmits independently with its ``tau``; a
    transmission collides when at least one other station also transmits.
    Returns (per-station collided/attempted, system collided/attempted).
    """
    taus = np.asarray(taus, dtype=float)
    attempts = np.zeros(len(taus))
    collided = np.zeros(len(taus))
    chunk = 200_000
    done = 0
    while done < n_slots:
        n = min(chunk, n_slots - done)
        tx = rng.random((n, len(taus))) < taus
        busy = tx.sum(axis=1)
        attempts += tx.sum(axis=0)
        collided += (tx & (busy[:, None] > 1)).sum(axis=0)
        done += n
    with np.errstate(invalid="ignore", divide="ignore"):
        per_sta = np.where(attempts > 0, collided / np.maximum(attempts, 1), 0.0)
    system = float(collided.sum() / attempts.sum()) if attempts.sum() else 0.0
    return per_sta, system


def _scenario_code(traces, offloaded):
    if offloaded in (None, NO_OFFLOAD):
        return 0
    for i, t in enumerate(traces):
        if t.station == offloaded:
            return i + 1
    raise KeyError(f"offloaded station {offloaded!r} not in ensemble")


def link_rates(traces) -> dict:
    return {t.station: float(t.link_rate) for t in traces}


def period_loads(traces, period: int, window: int) -> dict:
    """Smoothed (up, down) rates of every station for one period."""
    out = {}
    for t in smooth_ensemble(traces, window):
        if not 0 <= period < t.n_periods:
            raise IndexError(f"period {period} outside trace of {t.n_periods} periods")
        out[t.station] = t.epochs[period * t.epochs_per_period]
    return out


def stats_from_loads(rates: dict, offloaded, config: ChannelConfig, rng=None,
                     links: dict | None = None) -> PeriodStats:
    """Channel outcome for given (up, down) rates with one station on LiFi.

    ``rng`` drives KPI observation noise and, in Monte Carlo mode, the slots.
    Without ``rng`` the outcome is noise-free and closed form. ``links`` maps
    stations to relative link rates (missing stations count as 1).
    """
    if offloaded not in (None, NO_OFFLOAD) and offloaded not in rates:
        raise KeyError(f"offloaded station {offloaded!r} not in ensemble")
    links = links or {}
    wifi = {s: r for s, r in rates.items() if s != offloaded}
    names = list(wifi)
    link = [links.get(s, 1.0) for s in names]
    taus = transmit_probs([wifi[s][0] + wifi[s][1] for s in names], config, link)
    if rng is not None and config.slots_per_period > 0:
        p, kpi = monte_carlo_collisions(taus, config.slots_per_period, rng)
    else:
        p, kpi = _collision_from_taus(taus)
    air = float(100.0 * (1.0 - np.prod(1.0 - taus)))

    lifi = 0.0
    if offloaded not in (None, NO_OFFLOAD):
        lifi = min(float(sum(rates[offloaded])), config.lifi_capacity)

    if rng is not None and config.noise_sd > 0:
        e_col, e_air = rng.standard_normal(2)
        kpi = float(np.clip(kpi + config.noise_sd * e_col, 0.0, 1.0))
        air = float(np.clip(air + 100.0 * config.noise_sd * e_air, 0.0, 100.0))

    per_sta = {
        s: StaPeriodStats(float(p[i]), float(wifi[s][0]), float(wifi[s][1]), float(p[i]),
                          float(link[i]))
        for i, s in enumerate(names)
    }
    return PeriodStats(per_sta, float(kpi), air, lifi,
                       NO_OFFLOAD if offloaded is None else offloaded)


def simulate_period(traces, period: int, offloaded, config: ChannelConfig, seed) -> PeriodStats:
    """Simulate one period with ``offloaded`` (or nobody) moved to LiFi.

    The noise stream is keyed by (seed, period, scenario): a scenario sweep
    run with one seed differs only by the offload decision, yet each scenario
    gets its own run-to-run variation, as separate simulator runs would.
    """
    code = _scenario_code(traces, offloaded)
    rates = period_loads(traces, period, config.smoothing_window)
    rng = None
    if seed is not None:
        rng = np.random.default_rng([int(seed), int(period), code])
    return stats_from_loads(rates, offloaded, config, rng, link_rates(traces))


def scenario_sweep(traces, period: int, candidates, config: ChannelConfig, seed) -> dict:
    """No-offload plus one scenario per candidate, all under the same seed."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("empty candidate set")
    out = {NO_OFFLOAD: simulate_period(traces, period, None, config, seed)}
    for c in candidates:
        out[c] = simulate_period(traces, period, c, config, seed)
    return out
