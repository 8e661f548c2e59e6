"""Contextual-bandit LiFi offload controller and its lab-experiment environment.

The LiFi antenna points at one of ``C`` positions, one candidate station
each. Every sample the controller observes per-station Wi-Fi and LiFi
traffic plus the airtime KPI ``kpi = 100 - air``. After a round-robin
exploration of ``T_e`` samples a model is trained on
``(context, position) -> kpi`` and from then on every ``T_s`` samples the
position with the highest predicted KPI is chosen.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import one_hot
from .channel import ChannelConfig, link_rates, period_loads, stats_from_loads
from .predictors import (
    ModelSpec, NeuralKpiRegressor, RandomSelector, design_matrix, make_estimator,
    select_offload, Sample,
)
from .workload import TraceEnsembleConfig, candidates as candidate_ids, generate_ensemble

UP, DOWN = 0, 1
LOG_COLUMNS = ("k", "position", "kpi", "collision", "lifi_served", "switch")
REFERENCE_KINDS = ("OPTIMAL", "WORST")


def kpi_invert(air: float) -> float:
    if not 0.0 <= air <= 100.0:
        raise ValueError(f"air must be in [0, 100], got {air}")
    return 100.0 - air


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def normalize_loads(loads, mins, maxs) -> np.ndarray:
    """Per-station min-max scaling, clipped to [0, 1]; 0 where max == min."""
    loads, mins, maxs = (np.asarray(a, dtype=float) for a in (loads, mins, maxs))
    if np.any(maxs < mins):
        raise ValueError("max must be >= min for every station")
    span = maxs - mins
    out = np.zeros_like(loads)
    ok = span > 0
    out[ok] = np.clip((loads[ok] - mins[ok]) / span[ok], 0.0, 1.0)
    return out


def softmax_features(loads, mins, maxs) -> np.ndarray:
    """Softmax over stations of min-max normalised loads (one direction)."""
    return softmax(normalize_loads(loads, mins, maxs))


@dataclass(frozen=True)
class ContextVector:
    """Softmax load features of the ``C`` stations.

    ``w_*`` and ``l_*`` describe the measured state. ``share_*`` keep the
    softmax shares before the LiFi split so the context can be projected
    onto any state: state 0 is "nobody on LiFi", state ``i`` (1..C) puts
    the station at position ``i - 1`` on LiFi.
    """

    w_down: np.ndarray
    w_up: np.ndarray
    l_down: np.ndarray
    l_up: np.ndarray
    position_onehot: np.ndarray
    share_down: np.ndarray | None = None
    share_up: np.ndarray | None = None
    h_lifi: float = 1.0

    @property
    def C(self) -> int:
        return len(self.position_onehot)

    @property
    def n_states(self) -> int:
        return self.C + 1

    @property
    def position(self) -> int:
        return int(np.argmax(self.position_onehot))

    def features(self, state: int) -> np.ndarray:
        one_hot(state, self.n_states)
        if self.share_down is None:
            return np.concatenate([self.w_down, self.w_up, self.l_down, self.l_up])
        blocks = []
        for share in (self.share_down, self.share_up):
            w = share.copy()
            if state:
                w[state - 1] = 0.0
            blocks.append(w)
        for share in (self.share_down, self.share_up):
            l_vec = np.zeros(self.C)
            if state:
                l_vec[state - 1] = self.h_lifi * share[state - 1]
            blocks.append(l_vec)
        return np.concatenate(blocks)


@dataclass(frozen=True)
class ControllerConfig:
    T_e: int = 400
    T_s: int = 4
    h_lifi: float = 3.5
    C: int = 4
    objective: str = "maximize"
    horizon: int = 150  # samples evaluated after exploration
    samples_per_epoch: int = 15

    def __post_init__(self):
        if self.C < 1:
            raise ValueError("C must be >= 1")
        if self.T_e < self.C:
            raise ValueError("T_e must be >= C")
        if self.T_s < 1:
            raise ValueError("T_s must be >= 1")
        if self.h_lifi < 1:
            raise ValueError("h_lifi must be >= 1")
        if self.objective not in ("maximize", "minimize"):
            raise ValueError("objective must be 'maximize' or 'minimize'")
        if self.horizon < 0 or self.samples_per_epoch < 1:
            raise ValueError("horizon must be >= 0 and samples_per_epoch >= 1")

    @property
    def n_samples(self) -> int:
        return self.T_e + self.horizon

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown controller config key(s): {sorted(unknown)}")
        return cls(**d)


def build_context(wifi_loads, lifi_loads, offloaded, current_position, config: ControllerConfig,
                  mins, maxs) -> ContextVector:
    """Context from per-station (up, down) traffic on each link.

    ``wifi_loads`` and ``lifi_loads`` are ``(C, 2)`` arrays; ``mins`` and
    ``maxs`` the per-station, per-direction normalisation bounds. The
    softmax runs over all ``C`` stations, the offloaded one entering with
    its LiFi traffic; that share then moves to the LiFi block, boosted by
    ``h_lifi``, and its Wi-Fi entry is zeroed.
    """
    wifi = np.asarray(wifi_loads, dtype=float)
    lifi = np.asarray(lifi_loads, dtype=float)
    C = config.C
    if wifi.shape != (C, 2) or lifi.shape != (C, 2):
        raise ValueError(f"loads must have shape ({C}, 2)")
    if offloaded is not None and not 0 <= offloaded < C:
        raise IndexError(f"offloaded index {offloaded} out of range for C={C}")
    mins = np.asarray(mins, dtype=float).reshape(C, 2)
    maxs = np.asarray(maxs, dtype=float).reshape(C, 2)
    blocks, shares = {}, {}
    for d in (UP, DOWN):
        seen = wifi[:, d].copy()
        if offloaded is not None:
            seen[offloaded] = lifi[offloaded, d]
        share = softmax_features(seen, mins[:, d], maxs[:, d])
        w = share.copy()
        l_vec = np.zeros(C)
        if offloaded is not None:
            w[offloaded] = 0.0
            l_vec[offloaded] = config.h_lifi * share[offloaded]
        blocks[d] = (w, l_vec)
        shares[d] = share
    return ContextVector(blocks[DOWN][0], blocks[UP][0], blocks[DOWN][1], blocks[UP][1],
                         one_hot(current_position, C), shares[DOWN], shares[UP],
                         float(config.h_lifi))


# --------------------------------------------------------------------------
# environment


@dataclass(frozen=True)
class Measurement:
    k: int
    position: int  # 0-based antenna position
    active: int | None  # position whose station is actually on LiFi
    wifi: np.ndarray  # (C, 2) up/down Mbps on Wi-Fi, candidate stations
    lifi: np.ndarray  # (C, 2) up/down Mbps on LiFi
    kpi: float
    air: float
    collision: float
    lifi_served: float


class LabEnvironment:
    """Channel model driven by a trace ensemble, sampled ``samples_per_epoch`` times per epoch.

    The antenna can move at any sample, but a station only moves its
    traffic onto LiFi at the start of its next trace epoch (immediately if
    the move happens on an epoch boundary); the station losing the beam
    falls back to Wi-Fi at once. KPI noise is keyed by (seed, sample) so
    every policy run on the same seed sees the same noise.
    """

    def __init__(self, traces, channel: ChannelConfig, samples_per_epoch: int, seed, positions=None):
        self.traces = list(traces)
        self.channel = channel
        self.samples_per_epoch = int(samples_per_epoch)
        self.seed = seed
        self.positions = list(positions) if positions is not None else candidate_ids(self.traces)
        self.links = link_rates(self.traces)
        epp = self.traces[0].epochs_per_period
        self.epochs_per_period = epp
        self.n_epochs = len(self.traces[0].epochs)
        self._loads = {}

    @property
    def n_samples(self) -> int:
        return self.n_epochs * self.samples_per_epoch

    def rates(self, k: int) -> dict:
        if not 0 <= k < self.n_samples:
            raise IndexError(f"sample {k} beyond trace of {self.n_samples} samples")
        period = (k // self.samples_per_epoch) // self.epochs_per_period
        if period not in self._loads:
            self._loads[period] = period_loads(self.traces, period, self.channel.smoothing_window)
        return self._loads[period]

    def active(self, k: int, position: int, since: int):
        """Position actually served by LiFi at ``k`` for an antenna moved at ``since``."""
        epoch_start = (k // self.samples_per_epoch) * self.samples_per_epoch
        return position if since <= epoch_start else None

    def _stats(self, k, active, rng):
        rates = self.rates(k)
        station = None if active is None else self.positions[active]
        return stats_from_loads(rates, station, self.channel, rng, self.links)

    def true_kpi(self, k: int, active) -> float:
        return kpi_invert(self._stats(k, active, None).air)

    def measure(self, k: int, position: int, since: int) -> Measurement:
        act = self.active(k, position, since)
        rng = None if self.seed is None else np.random.default_rng([*np.atleast_1d(self.seed).tolist(), k])
        st = self._stats(k, act, rng)
        rates = self.rates(k)
        C = len(self.positions)
        wifi = np.zeros((C, 2))
        lifi = np.zeros((C, 2))
        for i, s in enumerate(self.positions):
            up, down = rates[s]
            if i == act:
                total = up + down
                scale = st.lifi_served / total if total > 0 else 0.0
                lifi[i] = (up * scale, down * scale)
            else:
                wifi[i] = (up, down)
        return Measurement(k, position, act, wifi, lifi, kpi_invert(st.air), st.air,
                           st.collision_kpi, st.lifi_served)


# The lab AP is shared by 4 stations only, so its reference capacity is
# lower than the simulated network's to keep contention comparable.
LAB_CAPACITY_REF = 1500.0


def make_environment(seed, replica: int = 0, workload: TraceEnsembleConfig | None = None,
                     channel: ChannelConfig | None = None, config: ControllerConfig | None = None,
                     background: bool = False):
    """Lab environment for one replica.

    The lab has one station per antenna position; background stations of
    the workload ensemble are dropped unless ``background`` is set.
    """
    workload = workload or TraceEnsembleConfig()
    channel = channel or ChannelConfig(capacity_ref=LAB_CAPACITY_REF)
    config = config or ControllerConfig()
    traces = generate_ensemble(workload, [int(seed), int(replica)])
    if not background:
        traces = [t for t in traces if t.station in set(candidate_ids(traces))]
    env = LabEnvironment(traces, channel, config.samples_per_epoch, [int(seed), int(replica), 7])
    if len(env.positions) != config.C:
        raise ValueError(f"ensemble has {len(env.positions)} candidates, controller expects C={config.C}")
    return env


# --------------------------------------------------------------------------
# controller loop


@dataclass
class ExperimentLog:
    model_kind: str
    k: list = field(default_factory=list)
    position: list = field(default_factory=list)  # 1-based
    kpi: list = field(default_factory=list)
    collision: list = field(default_factory=list)
    lifi_served: list = field(default_factory=list)
    contexts: list = field(default_factory=list)

    @property
    def switch_flags(self) -> list:
        return [0] + [int(a != b) for a, b in zip(self.position, self.position[1:])]

    @property
    def switches(self) -> int:
        return sum(self.switch_flags)

    def switches_after(self, T_e: int) -> int:
        """Position changes at samples ``k >= T_e``."""
        return sum(f for k, f in zip(self.k, self.switch_flags) if k >= T_e)

    def post_exploration(self, T_e: int):
        """Arrays of (kpi, collision, lifi_served) for samples k >= T_e."""
        idx = [i for i, k in enumerate(self.k) if k >= T_e]
        return (np.array([self.kpi[i] for i in idx]), np.array([self.collision[i] for i in idx]),
                np.array([self.lifi_served[i] for i in idx]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in zip(self.k, self.position, self.kpi, self.collision, self.lifi_served,
                           self.switch_flags):
                w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3])),
                            repr(float(row[4])), row[5]])


def read_log_csv(path, model_kind: str = "") -> ExperimentLog:
    log = ExperimentLog(model_kind)
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            log.k.append(int(rec["k"]))
            log.position.append(int(rec["position"]))
            log.kpi.append(float(rec["kpi"]))
            log.collision.append(float(rec["collision"]))
            log.lifi_served.append(float(rec["lifi_served"]))
    return log


def _bounds(measurements, C):
    """Per-station, per-direction min/max of total traffic over ``measurements``."""
    tot = np.array([m.wifi + m.lifi for m in measurements])  # (n, C, 2)
    return tot.min(axis=0), tot.max(axis=0)


def _state(m: Measurement) -> int:
    return 0 if m.active is None else m.active + 1


def _context(m: Measurement, config, bounds):
    return build_context(m.wifi, m.lifi, m.active, m.position, config, *bounds)


def run_experiment(env: LabEnvironment, spec: ModelSpec | str, config: ControllerConfig, seed=0,
                   n_samples: int | None = None) -> ExperimentLog:
    """Run one controller replica.

    ``spec`` is a :class:`ModelSpec` (NN, LR or RAND) or one of the
    reference policies ``"OPTIMAL"`` / ``"WORST"``, which read the true
    noise-free KPI of every position from the environment.
    """
    n = config.n_samples if n_samples is None else int(n_samples)
    if env.n_samples < max(n, config.T_e + 1):
        raise ValueError(f"trace exhausted: {env.n_samples} samples, need {max(n, config.T_e + 1)}")
    reference = isinstance(spec, str)
    if reference:
        if spec not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference policy {spec!r}")
        kind = spec
    else:
        kind = spec.kind
        if kind == "COL":
            raise ValueError("COL needs per-state observed KPIs; not available in experiment mode")
    C = config.C
    log = ExperimentLog(kind)
    rng = np.random.default_rng([int(seed), 2])
    measurements: list[Measurement] = []
    model, bounds, X, y = None, None, None, None
    position, since = 0, 0

    for k in range(n):
        if k % config.T_s == 0:
            if k < config.T_e:
                new = (k // config.T_s) % C
            else:
                if bounds is None:
                    bounds = _bounds(measurements[: config.T_e], C)
                if reference:
                    vals = [env.true_kpi(k, p) for p in range(C)]
                    new = int(np.argmax(vals) if spec == "OPTIMAL" else np.argmin(vals))
                else:
                    samples = [Sample(_context(m, config, bounds), _state(m), m.kpi)
                               for m in measurements[len(y) if y is not None else 0:]]
                    Xn, yn = design_matrix(samples)
                    X = Xn if X is None else np.vstack([X, Xn])
                    y = yn if y is None else np.concatenate([y, yn])
                    if model is None:
                        model = make_estimator(spec)
                        model.fit(X, y) if not isinstance(model, RandomSelector) else model.fit()
                    else:
                        steps = max(1, spec.nn_epochs // 10) if isinstance(model, NeuralKpiRegressor) else None
                        model.update(X, y, n_recent=len(yn), n_steps=steps)
                    ctx = _context(measurements[-1], config, bounds)
                    new = select_offload(model, ctx, list(range(1, C + 1)), config.objective, rng) - 1
            if new != position:
                position, since = new, k
        m = env.measure(k, position, since)
        measurements.append(m)
        log.k.append(k)
        log.position.append(position + 1)
        log.kpi.append(m.kpi)
        log.collision.append(m.collision)
        log.lifi_served.append(m.lifi_served)
    if bounds is not None:
        log.contexts = [_context(m, config, bounds) for m in measurements]
    return log
