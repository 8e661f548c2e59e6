"""Seeded campaign runners, their CSV artifacts and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .channel import NO_OFFLOAD, ChannelConfig, PeriodStats, StaPeriodStats, scenario_sweep
from .controller import (LAB_CAPACITY_REF, REFERENCE_KINDS, ControllerConfig, ExperimentLog,
                         make_environment, read_log_csv, run_experiment)
from .evaluation import aggregate_experiments, bootstrap_ordering, score_selections
from .predictors import ModelSpec, build_dataset, select_offload, train
from .workload import TraceEnsembleConfig, candidates, generate_ensemble

SWEEP_COLUMNS = ("period", "scenario", "collision_kpi", "air", "lifi_served")
STA_COLUMNS = ("period", "scenario", "station", "collision_prob", "served_up", "served_down",
               "retries", "link_rate")
MANIFEST_NAME = "manifest.json"


class ConfigError(ValueError):
    """Malformed configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _section(cls, doc, path):
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    try:
        return cls.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _check_keys(doc, allowed, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")


# --------------------------------------------------------------------------
# simulation campaign


@dataclass(frozen=True)
class SimulationConfig:
    # 11 periods: 8 training, 2 test, 1 realising the last test decision
    workload: TraceEnsembleConfig = field(default_factory=lambda: TraceEnsembleConfig(epochs=110))
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    runs: int = 50
    train_periods: int = 8
    test_periods: int = 2
    models: tuple = ("RAND", "COL", "LR", "NN")
    model: dict = field(default_factory=dict)  # ModelSpec overrides (kind and seed excluded)
    bootstrap: int = 200

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs", "must be >= 1")
        if self.train_periods < 1 or self.test_periods < 1:
            raise ConfigError("train_periods", "train_periods and test_periods must be >= 1")
        need = self.train_periods + self.test_periods + 1
        if self.workload.n_periods < need:
            raise ConfigError("workload.epochs", f"need at least {need} periods")
        object.__setattr__(self, "models", tuple(self.models))
        for i, m in enumerate(self.models):
            if m not in ("RAND", "COL", "LR", "NN"):
                raise ConfigError(f"models[{i}]", f"unknown model {m!r}")
        _model_spec("NN", 0, self.model)

    def to_dict(self):
        return {"workload": self.workload.to_dict(), "channel": self.channel.to_dict(),
                "runs": self.runs, "train_periods": self.train_periods,
                "test_periods": self.test_periods, "models": list(self.models),
                "model": dict(self.model), "bootstrap": self.bootstrap}

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, cls.__dataclass_fields__)
        d = dict(d)
        d["workload"] = _section(TraceEnsembleConfig, d.get("workload"), "workload") \
            or TraceEnsembleConfig(epochs=110)
        d["channel"] = _section(ChannelConfig, d.get("channel"), "channel") or ChannelConfig()
        return cls(**d)


def _model_spec(kind, seed, overrides) -> ModelSpec:
    bad = sorted(set(overrides) - (set(ModelSpec.__dataclass_fields__) - {"kind", "seed"}))
    if bad:
        raise ConfigError(f"model.{bad[0]}", "unknown key")
    try:
        return ModelSpec(kind=kind, seed=seed, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from exc


def unit_seed(seed: int, run: int) -> int:
    """Integer noise seed of one (campaign seed, run) unit."""
    return int(seed) * 100003 + int(run)


def simulate_run(config: SimulationConfig, seed: int, run: int) -> dict:
    traces = generate_ensemble(config.workload, [int(seed), int(run)])
    cands = candidates(traces)
    sweeps = [scenario_sweep(traces, p, cands, config.channel, unit_seed(seed, run))
              for p in range(config.workload.n_periods)]
    return {"candidates": cands, "sweeps": sweeps}


def write_sweep_csv(run: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for p, sweep in enumerate(run["sweeps"]):
            for scen, st in sweep.items():
                w.writerow([p, scen, repr(st.collision_kpi), repr(st.air), repr(st.lifi_served)])


def write_station_csv(run: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STA_COLUMNS)
        for p, sweep in enumerate(run["sweeps"]):
            for scen, st in sweep.items():
                for sta, m in st.per_sta.items():
                    w.writerow([p, scen, sta, repr(m.collision_prob), repr(m.served_up),
                                repr(m.served_down), repr(m.retries), repr(m.link_rate)])


def read_run(sweep_path, station_path) -> dict:
    """Rebuild a run (candidates and per-period sweeps) from its two CSVs."""
    per = {}
    with open(station_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            key = (int(rec["period"]), rec["scenario"])
            per.setdefault(key, {})[rec["station"]] = StaPeriodStats(
                float(rec["collision_prob"]), float(rec["served_up"]), float(rec["served_down"]),
                float(rec["retries"]), float(rec["link_rate"]))
    sweeps, scenarios = [], []
    with open(sweep_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            p, scen = int(rec["period"]), rec["scenario"]
            while len(sweeps) <= p:
                sweeps.append({})
            if p == 0:
                scenarios.append(scen)
            sweeps[p][scen] = PeriodStats(per.get((p, scen), {}), float(rec["collision_kpi"]),
                                          float(rec["air"]), float(rec["lifi_served"]), scen)
    if not sweeps:
        raise ValueError(f"{sweep_path}: no rows")
    return {"candidates": [s for s in scenarios if s != NO_OFFLOAD], "sweeps": sweeps}


def _sim_unit(args):
    config, seed, run, out = args
    r = simulate_run(config, seed, run)
    write_sweep_csv(r, Path(out) / f"sweep_{run:03d}.csv")
    write_station_csv(r, Path(out) / f"stations_{run:03d}.csv")
    return run


def run_simulation_campaign(config: SimulationConfig, seed: int, out, parallel: int = 1) -> list:
    """Simulate every run and write its CSVs to ``out``; returns the file names."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    units = [(config, int(seed), r, str(out)) for r in range(config.runs)]
    _map(_sim_unit, units, parallel)
    return [f"{stem}_{r:03d}.csv" for r in range(config.runs) for stem in ("sweep", "stations")]


def load_campaign(directory, runs: int) -> list:
    d = Path(directory)
    return [read_run(d / f"sweep_{r:03d}.csv", d / f"stations_{r:03d}.csv") for r in range(runs)]


@dataclass(frozen=True)
class SimulationStudy:
    scores: dict  # model -> PredictorScore
    ordering: float  # bootstrap fraction of NN > LR > RAND


def simulation_study(campaign, config: SimulationConfig, seed: int) -> SimulationStudy:
    """Train every model on the campaign and score its held-out decisions."""
    train_set, test = build_dataset(campaign, config.train_periods, config.test_periods)
    scores = {}
    for kind in config.models:
        model = train(_model_spec(kind, int(seed), config.model), train_set)
        rng = np.random.default_rng([int(seed), 5])
        picks = [select_offload(model, tc.context, tc.candidates, "minimize", rng) for tc in test]
        scores[kind] = score_selections(kind, test, picks, "minimize")
    order = [m for m in ("NN", "LR", "RAND") if m in scores]
    ordering = float("nan")
    if len(order) == 3:
        ordering = bootstrap_ordering({m: scores[m].cis_values for m in order}, order,
                                      config.bootstrap, seed=int(seed))
    return SimulationStudy(scores, ordering)


def write_picks_csv(study: SimulationStudy, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "model", "pick"])
        for m, s in study.scores.items():
            for i, p in enumerate(s.picks):
                w.writerow([i, m, p])


# --------------------------------------------------------------------------
# experiment campaign


EXPERIMENT_MODELS = ("NN", "LR", "RAND", "OPTIMAL", "WORST")


@dataclass(frozen=True)
class ExperimentConfig:
    T_e: int = 400
    T_s: int = 4
    h_lifi: float = 3.5
    positions: int = 4
    model: tuple = EXPERIMENT_MODELS
    seed: int | None = None
    replicas: int = 5
    horizon: int = 150
    samples_per_epoch: int = 15
    workload: TraceEnsembleConfig = field(default_factory=TraceEnsembleConfig)
    channel: ChannelConfig = field(default_factory=lambda: ChannelConfig(capacity_ref=LAB_CAPACITY_REF))
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        models = (self.model,) if isinstance(self.model, str) else tuple(self.model)
        for i, m in enumerate(models):
            if m not in EXPERIMENT_MODELS:
                raise ConfigError(f"model[{i}]", f"unknown model {m!r}")
        object.__setattr__(self, "model", models)
        if self.replicas < 1:
            raise ConfigError("replicas", "must be >= 1")
        if self.seed is not None and not isinstance(self.seed, int):
            raise ConfigError("seed", "must be an integer")
        try:
            self.controller
        except ValueError as exc:
            raise ConfigError("", str(exc)) from exc
        _model_spec("NN", 0, self.model_params)

    @property
    def controller(self) -> ControllerConfig:
        return ControllerConfig(T_e=self.T_e, T_s=self.T_s, h_lifi=self.h_lifi, C=self.positions,
                                horizon=self.horizon, samples_per_epoch=self.samples_per_epoch)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["model"] = list(self.model)
        d["workload"] = self.workload.to_dict()
        d["channel"] = self.channel.to_dict()
        d["model_params"] = dict(self.model_params)
        return d

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, cls.__dataclass_fields__)
        d = dict(d)
        d["workload"] = _section(TraceEnsembleConfig, d.get("workload"), "workload") \
            or TraceEnsembleConfig()
        d["channel"] = _section(ChannelConfig, d.get("channel"), "channel") \
            or ChannelConfig(capacity_ref=LAB_CAPACITY_REF)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("", str(exc)) from exc


def experiment_unit(config: ExperimentConfig, seed: int, kind: str, replica: int) -> ExperimentLog:
    ctrl = config.controller
    env = make_environment(seed, replica, config.workload, config.channel, ctrl)
    unit = int(seed) * 1000 + int(replica)
    spec = kind if kind in REFERENCE_KINDS else _model_spec(kind, unit, config.model_params)
    return run_experiment(env, spec, ctrl, seed=unit)


def _exp_unit(args):
    config, seed, kind, e, out = args
    log = experiment_unit(config, seed, kind, e)
    if out is not None:
        log.write_csv(Path(out) / f"log_{kind}_{e}.csv")
    return kind, e, log


def run_experiment_campaign(config: ExperimentConfig, seed: int, out=None, parallel: int = 1) -> dict:
    """Run every (model, replica) unit; logs are written to ``out`` if given."""
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    units = [(config, int(seed), kind, e, None if out is None else str(out))
             for kind in config.model for e in range(config.replicas)]
    logs = {kind: [None] * config.replicas for kind in config.model}
    for kind, e, log in _map(_exp_unit, units, parallel):
        logs[kind][e] = log
    return logs


def load_experiment_logs(directory, config: ExperimentConfig) -> dict:
    d = Path(directory)
    return {kind: [read_log_csv(d / f"log_{kind}_{e}.csv", kind) for e in range(config.replicas)]
            for kind in config.model}


def experiment_study(logs: dict, config: ExperimentConfig):
    reference = "OPTIMAL" if "OPTIMAL" in logs else next(iter(logs))
    return aggregate_experiments(logs, config.T_e, reference)


# --------------------------------------------------------------------------
# plumbing


def _map(fn, units, parallel):
    if parallel is None or parallel <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ProcessPoolExecutor(max_workers=int(parallel)) as pool:
        return list(pool.map(fn, units))


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    run_id: str
    subcommand: str
    config: dict
    seed: int | None
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    args: dict = field(default_factory=dict)
    started: str = field(default_factory=_now)
    finished: str | None = None

    @staticmethod
    def make_id(subcommand, config, seed, args) -> str:
        blob = json.dumps([subcommand, config, seed, args], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self, directory) -> Path:
        self.finished = _now()
        path = Path(directory) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        doc = json.loads(path.read_text())
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown manifest key")
        return cls(**doc)


def default_out(out) -> Path:
    if out is not None:
        return Path(out)
    env = os.environ.get("HETNET_OUT")
    if env:
        return Path(env)
    raise ConfigError("--out", "no output directory: pass --out or set HETNET_OUT")
