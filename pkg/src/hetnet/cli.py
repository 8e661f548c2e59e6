"""Command-line entry point: ``hetnet <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import SearchRect, pen_tree_align, radial_field, write_align_csv
from .campaign import (MANIFEST_NAME, ConfigError, ExperimentConfig, RunManifest, SimulationConfig,
                       _model_spec, default_out, experiment_study, load_campaign,
                       load_experiment_logs, run_experiment_campaign, run_simulation_campaign,
                       simulation_study, write_picks_csv)
from .evaluation import write_curves, write_experiment_report, write_simulation_report
from .predictors import build_dataset, save_model, train
from .trace_analysis import (all_station_metrics, anova_screen, compute_nis, read_trace_csv,
                             segment_trace, synthetic_trace, write_anova_csv, write_nis_csv)
from .workload import TraceEnsembleConfig, generate_ensemble, write_ensemble_csv

SUBCOMMANDS = ("analyze", "gen", "simulate", "train", "experiment", "align", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _load_config(path):
    """JSON config or a previous run's manifest; returns ``(config, seed)``."""
    if path is None:
        return {}, None
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(p), f"invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    if "run_id" in doc and "subcommand" in doc:
        m = RunManifest(**doc)
        return dict(m.config), m.seed
    return doc, None


def _seed(args, fallback=None) -> int:
    seed = args.seed if args.seed is not None else fallback
    if seed is None:
        raise ConfigError("--seed", "a seed is required")
    return int(seed)


def _finish(out: Path, subcommand, config, seed, outputs, inputs=(), extra=None):
    extra = extra or {}
    m = RunManifest(RunManifest.make_id(subcommand, config, seed, extra), subcommand, config, seed,
                    [str(i) for i in inputs], sorted(outputs), extra)
    m.write(out)


# --------------------------------------------------------------------------
# subcommands


def cmd_analyze(args):
    out = default_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trace:
        records = read_trace_csv(args.trace)
        seed = args.seed
    else:
        seed = _seed(args)
        records = synthetic_trace(seed)
    segments = segment_trace(records, args.segment)
    scores = compute_nis(segments)
    write_nis_csv(scores, out / "nis.csv")
    outputs = ["nis.csv"]
    try:
        results = anova_screen(all_station_metrics(records), {u: s.nis for u, s in scores.items()})
    except ValueError as exc:
        print(f"anova skipped: {exc}", file=sys.stderr)
    else:
        write_anova_csv(results, out / "anova.csv")
        outputs.append("anova.csv")
    config = {"segment_duration": args.segment, "trace": args.trace}
    _finish(out, "analyze", config, seed, outputs, [args.trace] if args.trace else [])


def cmd_gen(args):
    doc, mseed = _load_config(args.config)
    cfg = TraceEnsembleConfig.from_dict(doc) if doc else TraceEnsembleConfig()
    seed = _seed(args, mseed)
    out = default_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ensemble_csv(generate_ensemble(cfg, seed), out / "ensemble.csv")
    _finish(out, "gen", cfg.to_dict(), seed, ["ensemble.csv"])


def cmd_simulate(args):
    doc, mseed = _load_config(args.config)
    if args.runs is not None:
        doc = {**doc, "runs": args.runs}
    cfg = SimulationConfig.from_dict(doc)
    seed = _seed(args, mseed)
    out = default_out(args.out)
    files = run_simulation_campaign(cfg, seed, out, args.parallel)
    _finish(out, "simulate", cfg.to_dict(), seed, files)


def _campaign_manifest(path, kind):
    m = RunManifest.read(path)
    if m.subcommand != kind:
        raise ConfigError(str(path), f"expected a '{kind}' run, found '{m.subcommand}'")
    return m


def cmd_train(args):
    m = _campaign_manifest(args.sweeps, "simulate")
    cfg = SimulationConfig.from_dict(m.config)
    seed = _seed(args, m.seed)
    spec = _model_spec(args.model, seed, cfg.model)
    campaign = load_campaign(args.sweeps, cfg.runs)
    train_set, _ = build_dataset(campaign, cfg.train_periods, cfg.test_periods)
    out = default_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(train(spec, train_set), out / "model.json", spec)
    _finish(out, "train", {"model": spec.to_dict(), "campaign": m.run_id}, seed, ["model.json"],
            [args.sweeps])


def cmd_experiment(args):
    doc, mseed = _load_config(args.config)
    if args.replicas is not None:
        doc = {**doc, "replicas": args.replicas}
    cfg = ExperimentConfig.from_dict(doc)
    seed = _seed(args, cfg.seed if cfg.seed is not None else mseed)
    out = default_out(args.out)
    logs = run_experiment_campaign(cfg, seed, out, args.parallel)
    files = [f"log_{k}_{e}.csv" for k in logs for e in range(len(logs[k]))]
    _finish(out, "experiment", cfg.to_dict(), seed, files)


def cmd_align(args):
    doc, mseed = _load_config(args.config)
    params = {"width": args.width, "height": args.height, "optimum": args.optimum,
              "noise": args.noise, "eps": args.eps, "max_iter": args.max_iter,
              "grid_n": args.grid_n, **doc}
    seed = _seed(args, mseed)
    if params["width"] <= 0 or params["height"] <= 0:
        raise ConfigError("--width", "width and height must be > 0")
    rect0 = SearchRect((params["width"] / 2, params["height"] / 2), params["width"], params["height"])
    if params["optimum"] is None:
        rng = np.random.default_rng(seed)
        params["optimum"] = [float(rng.uniform(0, params["width"])),
                             float(rng.uniform(0, params["height"]))]
    field = radial_field(params["optimum"], noise_sd=params["noise"], seed=seed)
    res = pen_tree_align(field, rect0, params["eps"], params["max_iter"], params["grid_n"], seed)
    out = default_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_align_csv(res, out / "align.csv")
    ox, oy = params["optimum"]
    err = math.hypot(res.position[0] - ox, res.position[1] - oy)
    print(f"position=({res.position[0]:.3f}, {res.position[1]:.3f}) iterations={res.iterations} "
          f"probes={res.probe_count} error={err:.3f} m")
    _finish(out, "align", params, seed, ["align.csv"])


def cmd_report(args):
    src = Path(args.input)
    m = RunManifest.read(src)
    out = default_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if m.subcommand == "simulate":
        cfg = SimulationConfig.from_dict(m.config)
        study = simulation_study(load_campaign(src, cfg.runs), cfg, m.seed)
        write_simulation_report(study.scores.values(), out / "simulation_report.csv")
        write_picks_csv(study, out / "picks.csv")
        for s in study.scores.values():
            print(f"{s.model:5s} accuracy={s.accuracy:.3f}±{s.accuracy_se:.3f} "
                  f"cis={s.cis:.3f}±{s.cis_se:.3f}")
        print(f"NN > LR > RAND in {study.ordering:.2f} of bootstrap resamples")
        outputs = ["simulation_report.csv", "picks.csv"]
    elif m.subcommand == "experiment":
        cfg = ExperimentConfig.from_dict(m.config)
        curves, summary = experiment_study(load_experiment_logs(src, cfg), cfg)
        write_experiment_report(summary, out / "experiment_report.csv")
        write_curves(curves, out / "curves.csv")
        for s in summary:
            print(f"{s.model:8s} KPI={s.kpi:.3f} CP={s.collision:.3f} LiFi={s.lifi:.2f} "
                  f"switches={s.switches:.1f}")
        outputs = ["experiment_report.csv", "curves.csv"]
    else:
        raise ConfigError("--in", f"cannot report on a '{m.subcommand}' run")
    _finish(out, "report", {"source": m.run_id}, m.seed, outputs, [str(src)])


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hetnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hetnet {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def common(sp, seed_required=False):
        sp.add_argument("--out", help="output directory (default: $HETNET_OUT)")
        sp.add_argument("--seed", type=int, required=seed_required)
        return sp

    a = common(sub.add_parser("analyze", help="NIS ranking and ANOVA screen of a frame trace"))
    a.add_argument("--trace", help="trace CSV; omit to analyse a seeded synthetic trace")
    a.add_argument("--segment", type=float, default=60.0, help="segment length in seconds")
    a.set_defaults(func=cmd_analyze)

    g = common(sub.add_parser("gen", help="generate a workload ensemble"))
    g.add_argument("--config", help="workload JSON config or a manifest to replay")
    g.set_defaults(func=cmd_gen)

    s = common(sub.add_parser("simulate", help="simulation campaign (scenario sweeps)"))
    s.add_argument("--config", help="simulation JSON config or a manifest to replay")
    s.add_argument("--runs", type=int)
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    t = common(sub.add_parser("train", help="train a KPI predictor on a simulation campaign"))
    t.add_argument("--sweeps", required=True, help="output directory of a simulate run")
    t.add_argument("--model", default="NN", choices=("NN", "LR", "COL", "RAND"))
    t.set_defaults(func=cmd_train)

    e = common(sub.add_parser("experiment", help="experiment-mode controller runs"))
    e.add_argument("--config", help="experiment JSON config or a manifest to replay")
    e.add_argument("--replicas", type=int)
    e.add_argument("--parallel", type=int, default=1)
    e.set_defaults(func=cmd_experiment)

    al = common(sub.add_parser("align", help="pen-tree alignment on a synthetic RTT field"))
    al.add_argument("--config", help="manifest of an earlier align run to replay")
    al.add_argument("--width", type=float, default=4.0)
    al.add_argument("--height", type=float, default=4.0)
    al.add_argument("--optimum", type=float, nargs=2, metavar=("X", "Y"))
    al.add_argument("--noise", type=float, default=0.0, help="RTT noise sd (ms)")
    al.add_argument("--eps", type=float, default=0.01)
    al.add_argument("--max-iter", type=int, default=10)
    al.add_argument("--grid-n", type=int, default=33)
    al.set_defaults(func=cmd_align)

    r = sub.add_parser("report", help="tables and curves from a simulate or experiment run")
    r.add_argument("--in", dest="input", required=True, help="run directory")
    r.add_argument("--out", help="output directory (default: $HETNET_OUT)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ConfigError, KeyError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
