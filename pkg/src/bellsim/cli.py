"""Command-line front end: simulate / analyze / series / budget / calibrate / sweep.

All machine output goes to the --out file (or stdout where noted); progress
and warnings go to stderr.  Every subcommand is deterministic given --config
and --seed.  Exit codes: 0 success, 2 usage, 3 validation, 4 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import __version__, io, simulator, stats

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

PRESET_NAMES = ("experiment_a", "experiment_b", "experiment_c", "experiment_d")


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES:
        raise io.ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return files("bellsim").joinpath(f"presets/{name}.cfg").read_text(encoding="utf-8")


def _load_config(value: str | None) -> simulator.ExperimentConfig:
    if value is None:
        return simulator.default_config()
    path = Path(value)
    if path.exists():
        return io.parse_config(path)
    if value in PRESET_NAMES:
        return io.parse_config_text(preset_text(value))
    raise io.ConfigError(f"config {value!r} is neither a file nor a preset name")


def _apply_seed(config, seed):
    return config if seed is None else replace(config, rng_seed=seed)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        io.write_text_atomic(out, text)


def _cmd_simulate(args) -> int:
    config = _apply_seed(_load_config(args.config), args.seed)
    run = simulator.run_experiment(config)
    payload = "".join(json.dumps(io.record_to_dict(r)) + "\n" for r in run.records)
    io.write_text_atomic(args.out, payload)
    io.write_run_metadata(args.out, config, run.warnings)
    for w in run.warnings:
        _progress(f"warning: {w}")
    _progress(f"wrote {len(run.records)} records to {args.out}")
    return EXIT_OK


def _analysis_config(args, records_path):
    if args.config is not None:
        return _load_config(args.config)
    bundle = io.read_run_metadata(records_path)
    return bundle.config if bundle is not None else None


def _cmd_analyze(args) -> int:
    records = io.read_records(args.records)
    config = _analysis_config(args, args.records)
    report = stats.analyze_records(records, config)
    text = json.dumps(io.report_to_dict(report), indent=2) + "\n"
    _emit(text, args.out)
    _progress(
        f"S = {report.S:.4f} +- {report.sigma_stat:.4f} (stat), "
        f"signaling {report.signaling.sigma:.2f} sigma"
    )
    return EXIT_OK


def _cmd_series(args) -> int:
    records = io.read_records(args.records)
    result = stats.cumulative_series(records, args.step)
    _emit(io.series_to_csv(result.points), args.out)
    if result.gaps:
        _progress(
            f"{len(result.gaps)} prefix(es) skipped: not all settings measured yet"
        )
    _progress(f"{len(result.points)} series points")
    return EXIT_OK


def _cmd_budget(args) -> int:
    config = _load_config(args.config) if args.config else simulator.default_config()
    sigma = math.radians(args.motor_sigma_deg)
    angles = stats.AnalyzerAngles(
        alice_hwp=tuple(config.alice.hwp_targets),
        bob_hwp=tuple(config.bob.hwp_targets),
    )
    value = stats.motor_budget(sigma, args.reps, config.source, angles)
    payload = {
        "format_version": io.FORMAT_VERSION,
        "motor_sigma_deg": args.motor_sigma_deg,
        "repetitions": args.reps,
        "visibility": config.source.visibility,
        "sigma_syst": value,
    }
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    config = _apply_seed(_load_config(args.config), args.seed)
    result = simulator.calibrate_attenuators(
        config,
        tolerance=args.tolerance,
        block_seconds=args.block_seconds,
        max_iterations=args.max_iterations,
    )
    payload = {
        "format_version": io.FORMAT_VERSION,
        "converged": result.converged,
        "tolerance": args.tolerance,
        "stations": [
            {
                "station": st.station,
                "converged": st.converged,
                "iterations": [
                    {
                        "gamma": it.gamma,
                        "gamma_prime": it.gamma_prime,
                        "attenuators": list(it.attenuators),
                    }
                    for it in st.iterations
                ],
            }
            for st in result.stations
        ],
        "attenuators": {
            "alice": list(result.config.alice.attenuator),
            "bob": list(result.config.bob.attenuator),
        },
    }
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    if args.emit_config:
        io.write_text_atomic(args.emit_config, io.serialize_config(result.config))
        _progress(f"calibrated config written to {args.emit_config}")
    if not result.converged:
        _progress("warning: calibration did not reach tolerance")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = _apply_seed(_load_config(args.config), args.seed)
    base_mapping = io.config_to_mapping(base)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise io.ConfigError("--values must list at least one value")
    if args.runs < 1:
        raise io.ConfigError("--runs must be at least 1")
    rows = []
    for iv, raw in enumerate(values):
        mapping = dict(base_mapping)
        io.set_mapping_value(mapping, args.param, raw)
        config = io.config_from_mapping(mapping)
        s_values, sig_values = [], []
        for run_idx in range(args.runs):
            seed = int(
                np.random.SeedSequence(
                    [base.rng_seed & 0xFFFFFFFF, iv, run_idx]
                ).generate_state(1)[0]
            )
            run = simulator.run_experiment(replace(config, rng_seed=seed))
            report = stats.analyze_records(run.records, config)
            s_values.append(report.S)
            sig_values.append(report.signaling.sigma)
        q = lambda vals, p: float(np.quantile(vals, p))
        rows.append(
            (
                args.param,
                raw,
                args.runs,
                q(s_values, 0.5),
                q(s_values, 0.25),
                q(s_values, 0.75),
                q(sig_values, 0.5),
                q(sig_values, 0.25),
                q(sig_values, 0.75),
                stats.systematic_budget(config),
            )
        )
        _progress(f"{args.param} = {raw}: median lr sigma {rows[-1][6]:.3f}")
    header = (
        "param,value,runs,S_median,S_q25,S_q75,"
        "lr_sigma_median,lr_sigma_q25,lr_sigma_q75,sigma_syst"
    )
    lines = [f"# format_version: {io.FORMAT_VERSION}", header]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellsim",
        description="CHSH experiment simulator and apparent-signaling analysis",
    )
    parser.add_argument("--version", action="version", version=f"bellsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True, out_required=False):
        if config:
            p.add_argument(
                "--config",
                help="config file path or preset name (experiment_a..experiment_d)",
            )
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument(
            "--out",
            required=out_required,
            help="output path" + ("" if out_required else " (default: stdout)"),
        )

    p = sub.add_parser("simulate", help="run one experiment, write JSONL records")
    common(p, out_required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("analyze", help="full analysis report for a record stream")
    p.add_argument("--records", required=True, help="JSONL records path")
    common(p, seed=False)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("series", help="cumulative time-series CSV")
    p.add_argument("--records", required=True, help="JSONL records path")
    p.add_argument("--step", type=float, required=True, help="series step in seconds")
    common(p, config=False, seed=False)
    p.set_defaults(func=_cmd_series)

    p = sub.add_parser("budget", help="motor-precision systematic budget")
    p.add_argument("--motor-sigma-deg", type=float, required=True)
    p.add_argument("--reps", type=int, required=True)
    common(p, seed=False)
    p.set_defaults(func=_cmd_budget)

    p = sub.add_parser("calibrate", help="balance attenuators against efficiency asymmetry")
    p.add_argument("--tolerance", type=float, default=0.01)
    p.add_argument("--block-seconds", type=float, default=1000.0)
    p.add_argument("--max-iterations", type=int, default=10)
    p.add_argument("--emit-config", help="write the calibrated config here")
    common(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("sweep", help="repeat runs across values of one config key")
    p.add_argument("--param", required=True, help="config key, e.g. alice.detector_eff[1]")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--runs", type=int, required=True, help="runs per value")
    common(p, out_required=True)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except stats.NonConvergenceError as exc:
        _progress(f"error: {exc}")
        return EXIT_NUMERICAL
    except (io.ConfigError, io.RecordFormatError, stats.MissingSettingError) as exc:
        _progress(f"error: {exc}")
        return EXIT_VALIDATION
    except (ValueError, OSError) as exc:
        _progress(f"error: {exc}")
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
