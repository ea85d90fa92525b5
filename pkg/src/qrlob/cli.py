"""Command-line orchestration: calibrate -> simulate -> validate -> backtest.

Every command resolves its configuration from an optional key=value config
file (with [section] headers) plus flag overrides, writes all artifacts under
a run directory, and records a manifest with the fully resolved config.
Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

import argparse
import configparser
import json
import os
import sys
import time
from typing import List, Optional

import numpy as np

from . import __version__
from .calibrate import (
    ParameterBundle,
    calibrate_bundle,
    load_bundle,
    save_bundle,
)
from .engine import ASK, Engine, EventLog, MetaorderSpec, SimConfig, run_metaorder_experiment
from .errors import QrlobError
from .events import KIND_CODES, EventKind
from .impact import TargetProfile, calibrate_m, fit_exponential_weights, mle_calibrate
from .ingest import build_transitions, generate_synthetic, parse_stream, preprocess
from .presets import paperlike_bundle, uniform_bundle
from .state import StateKey
from .stats import write_stat_csv, write_validation_report
from .strategy import OUParams, run_hft_sweep, run_midfreq_sweep

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _error(kind: str, code: int, detail: str) -> int:
    sys.stderr.write("qrlob-error: " + json.dumps({"code": code, "kind": kind, "detail": detail}) + "\n")
    return code


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[f"{section}.{key}"] = value
    return flat


def _run_dir(args) -> str:
    out = args.out or "qrlob-run"
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(run_dir: str, command: str, config: dict, artifacts: List[str]) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(config.items())},
        "artifacts": sorted(os.path.relpath(a, run_dir) for a in artifacts),
        "version": __version__,
    }
    with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _resolved(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _load_preset_or_bundle(args) -> ParameterBundle:
    if getattr(args, "preset", None):
        if args.preset == "paperlike":
            return paperlike_bundle(timing=getattr(args, "timing", None) or "exp")
        if args.preset == "uniform":
            return uniform_bundle()
        raise QrlobError(f"unknown preset {args.preset!r}")
    return load_bundle(args.bundle)


def cmd_calibrate(args) -> int:
    run_dir = _run_dir(args)
    events = preprocess(parse_stream(args.input))
    bundle, report = calibrate_bundle(
        events, timing_mode=args.timing, gmm_k=args.gmm_k, seed=args.seed
    )
    bundle_path = os.path.join(run_dir, "bundle.json")
    save_bundle(bundle, bundle_path)
    print(f"events: {report.n_events}  transitions: {report.n_transitions}  sessions: {report.n_sessions}")
    print(f"populated states: {report.populated_states}/42  fallback states: {report.fallback_states}")
    if report.synthesized_wide:
        print("wide-spread states unobserved; synthesized 50/50 Create tables")
    for reason, count in report.dropped.items():
        print(f"dropped[{reason}]: {count}")
    for key, count in report.timing_fallbacks.items():
        print(f"timing cells[{key}]: {count}")
    for w in report.warnings:
        print(f"warning: {w}")
    _write_manifest(run_dir, "calibrate", _resolved(args, ("input", "timing", "gmm_k", "seed")), [bundle_path])
    print(f"wrote {bundle_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    run_dir = _run_dir(args)
    bundle = _load_preset_or_bundle(args)
    horizon = int(args.hours * 3_600_000_000_000)
    cfg = SimConfig(
        bundle=bundle,
        seed=args.seed,
        horizon_ns=horizon,
        timing_mode=args.timing,
        impact_enabled=args.impact == "on",
    )
    t0 = time.perf_counter()
    engine = Engine(cfg)
    log = engine.run()
    wall = time.perf_counter() - t0
    log_path = os.path.join(run_dir, "events.csv")
    _write_log_csv(log, log_path)
    print(f"simulated {len(log)} events over {args.hours} h in {wall:.1f} s")
    _write_manifest(run_dir, "simulate", _resolved(args, ("bundle", "preset", "hours", "seed", "timing", "impact")), [log_path])
    print(f"wrote {log_path}")
    return EXIT_OK


def _write_log_csv(log: EventLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_ns,kind,side,level,volume_units,imb_bin,spread_class,mid_half_ticks,phi,origin\n")
        kinds = log.column("kind")
        sides = log.column("side")
        for i in range(len(log)):
            fh.write(
                f"{log.t[i]},{KIND_CODES[EventKind(kinds[i])]},{'B' if sides[i] < 0 else 'S'},"
                f"{log.level[i]},{log.volume[i]},{log.imb[i] / 10:.1f},"
                f"{'2+' if log.wide[i] else '1'},{log.mid[i]},{log.phi[i]!r},{log.origin[i]}\n"
            )


def _read_log_csv(path: str) -> EventLog:
    from .events import CODE_KINDS

    log = EventLog()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("t_ns,"):
            raise QrlobError("not an event-log CSV")
        for line in fh:
            p = line.strip().split(",")
            if len(p) != 10:
                continue
            log.append(
                int(p[0]), int(CODE_KINDS[p[1]]), -1 if p[2] == "B" else 1, int(p[3]),
                int(p[4]), round(float(p[5]) * 10), 1 if p[6] == "2+" else 0,
                int(p[7]), float(p[8]), int(p[9]),
            )
    return log


def cmd_validate(args) -> int:
    run_dir = _run_dir(args)
    log = _read_log_csv(args.log)
    reference = None
    if args.reference:
        reference = np.loadtxt(args.reference)
    paths = write_validation_report(
        run_dir, log, delta_ns=args.delta_ns, reference_returns=reference,
        provenance=os.path.basename(args.log), bootstrap_seed=args.seed,
    )
    _write_manifest(run_dir, "validate", _resolved(args, ("log", "reference", "delta_ns", "seed")), paths)
    print(f"wrote {len(paths)} report files to {run_dir}")
    return EXIT_OK


def cmd_impact_calibrate(args) -> int:
    run_dir = _run_dir(args)
    bundle = _load_preset_or_bundle(args)
    artifacts = []
    if args.mode == "search":
        spec = MetaorderSpec(
            n_children=args.children,
            child_size_units=2,
            exec_horizon_ns=int(args.exec_minutes * 60e9),
            observe_horizon_ns=int(args.exec_minutes * 6 * 60e9),
            warmup_ns=int(60e9),
        )
        cfg = SimConfig(bundle=bundle, seed=args.seed)
        target = TargetProfile(args.exec_minutes * 60.0)
        result = calibrate_m(cfg, spec, target, n_paths=args.paths)
        updated = bundle.with_impact(result.m)
        bundle_path = os.path.join(run_dir, "bundle.json")
        save_bundle(updated, bundle_path)
        curve_path = os.path.join(run_dir, "mse_vs_m.csv")
        write_stat_csv(curve_path, "mse_vs_m", {"paths": args.paths}, ["m", "mse"], result.mse_curve)
        artifacts += [bundle_path, curve_path]
        print(f"m = {result.m:.4f}")
    elif args.mode == "mle":
        events = preprocess(parse_stream(args.input))
        dataset = build_transitions(events, bundle.mes)
        taus = [float(x) for x in args.tau_grid.split(",")]
        betas = [float(x) for x in args.beta_grid.split(",")]
        result = mle_calibrate(dataset, bundle.event_probs, taus, betas)
        surface_path = os.path.join(run_dir, "impact_nll.csv")
        rows = [
            (tau, beta, result.m_opt[i, j], result.nll[i, j])
            for i, tau in enumerate(result.tau_grid)
            for j, beta in enumerate(result.beta_grid)
        ]
        write_stat_csv(surface_path, "impact_nll", {}, ["tau", "beta", "m", "nll"], rows)
        updated = bundle.with_impact(result.m)
        updated.kernel = fit_exponential_weights(result.tau_s, result.beta)
        bundle_path = os.path.join(run_dir, "bundle.json")
        save_bundle(updated, bundle_path)
        artifacts += [bundle_path, surface_path]
        print(f"tau = {result.tau_s:g} s  beta = {result.beta:g}  m = {result.m:.4f}")
    else:
        raise QrlobError(f"unknown mode {args.mode!r}")
    _write_manifest(run_dir, "impact-calibrate", _resolved(args, ("bundle", "preset", "mode", "paths", "seed", "input", "tau_grid", "beta_grid")), artifacts)
    return EXIT_OK


def cmd_backtest(args) -> int:
    run_dir = _run_dir(args)
    bundle = _load_preset_or_bundle(args)
    horizon = int(args.minutes * 60e9)
    seeds = list(range(args.seeds))
    inventories = [int(x) for x in args.inventories.split(",")]
    q_maxes = [int(x) for x in args.qmax.split(",")]
    cfg = SimConfig(bundle=bundle, seed=args.seed, impact_enabled=args.impact == "on")
    if args.strategy == "hft":
        rows = run_hft_sweep(
            cfg, inventories, q_maxes, [False, True], seeds, horizon, threshold=args.threshold
        )
    elif args.strategy == "midfreq":
        thetas = [float(x) for x in args.thetas.split(",")]
        rows = run_midfreq_sweep(
            cfg, thetas, inventories, q_maxes,
            OUParams.with_unit_stationary_std(1.0 / 300.0), args.signal_scale, seeds, horizon,
        )
    else:
        raise QrlobError(f"unknown strategy {args.strategy!r}")
    sweep_path = os.path.join(run_dir, "sweep.csv")
    header = list(rows[0].keys())
    write_stat_csv(sweep_path, f"{args.strategy}_sweep", {"horizon_min": args.minutes}, header, ([r[k] for k in header] for r in rows))
    _write_manifest(run_dir, "backtest", _resolved(args, ("bundle", "preset", "strategy", "minutes", "seeds", "inventories", "qmax", "impact", "threshold", "thetas", "signal_scale", "seed")), [sweep_path])
    print(f"wrote {sweep_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_synth(args) -> int:
    run_dir = _run_dir(args)
    bundle = _load_preset_or_bundle(args)
    out_path = os.path.join(run_dir, "stream.csv")
    duration = int(args.hours * 3_600_000_000_000)
    generate_synthetic(bundle, duration, args.seed, out_path)
    _write_manifest(run_dir, "synth", _resolved(args, ("bundle", "preset", "hours", "seed")), [out_path])
    print(f"wrote {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrlob", description=__doc__)
    parser.add_argument("--config", help="key=value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", help="run directory")

    p = sub.add_parser("calibrate", help="estimate a parameter bundle from a stream")
    p.add_argument("--input", required=True)
    p.add_argument("--timing", choices=["exp", "gmm"], default="exp")
    p.add_argument("--gmm-k", type=int, default=5)
    common(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("simulate", help="run the simulator and dump its event log")
    p.add_argument("--bundle")
    p.add_argument("--preset", choices=["paperlike", "uniform"])
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--timing", choices=["exp", "gmm"])
    p.add_argument("--impact", choices=["on", "off"], default="off")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate", help="compute validation statistics from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--reference", help="text file of reference 5-minute returns")
    p.add_argument("--delta-ns", type=int, default=None)
    common(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("impact-calibrate", help="calibrate the impact multiplier or (tau, beta, m)")
    p.add_argument("--bundle")
    p.add_argument("--preset", choices=["paperlike", "uniform"])
    p.add_argument("--mode", choices=["search", "mle"], required=True)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--children", type=int, default=30)
    p.add_argument("--exec-minutes", type=float, default=1.0)
    p.add_argument("--input", help="stream for mle mode")
    p.add_argument("--tau-grid", default="12.5,25,50,100,200")
    p.add_argument("--beta-grid", default="0.75,1.0,1.5,2.25,3.0")
    common(p)
    p.set_defaults(fn=cmd_impact_calibrate)

    p = sub.add_parser("backtest", help="sweep a strategy over risk parameters")
    p.add_argument("--bundle")
    p.add_argument("--preset", choices=["paperlike", "uniform"])
    p.add_argument("--strategy", choices=["midfreq", "hft"], required=True)
    p.add_argument("--minutes", type=float, default=30.0)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--inventories", default="2,5,10")
    p.add_argument("--qmax", default="1,2,5")
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--thetas", default="0.5,1.0,1.5,2.0")
    p.add_argument("--signal-scale", type=float, default=0.5)
    p.add_argument("--impact", choices=["on", "off"], default="on")
    common(p)
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("synth", help="generate a synthetic canonical stream")
    p.add_argument("--bundle")
    p.add_argument("--preset", choices=["paperlike", "uniform"], default="paperlike")
    p.add_argument("--hours", type=float, default=1.0)
    common(p)
    p.set_defaults(fn=cmd_synth)

    parser.subcommands = {name: sp for name, sp in sub.choices.items()}
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser.subcommands[args.command]
        for key, value in _load_config(args.config).items():
            section, name = key.split(".", 1)
            if section != args.command:
                continue
            name = name.replace("-", "_")
            default = sub.get_default(name)
            # flags beat the config file: only fill values still at default
            if hasattr(args, name) and getattr(args, name) == default:
                cast = type(default) if default is not None else str
                setattr(args, name, cast(value))
    try:
        return args.fn(args)
    except QrlobError as exc:
        kind = type(exc).__name__
        if kind in ("NonBracketed",):
            return _error(kind, EXIT_NUMERIC, str(exc))
        return _error(kind, EXIT_DATA, str(exc))
    except FileNotFoundError as exc:
        return _error("FileNotFound", EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
