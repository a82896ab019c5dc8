"""Persistence and interchange: record streams, config files, reports, series.

Trial records travel as JSON Lines with a fixed field order; configs are flat
text files with dotted keys (angles in degrees, converted to radians on
load); analysis reports are single JSON documents and time series are CSV.
All formats carry ``format_version`` (a field in JSON, a leading comment in
text formats; record streams are versioned through their run-metadata
sidecar).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from .simulator import (
    ACQUISITION_MODES,
    DRIFT_KINDS,
    MOTOR_MODELS,
    DriftModel,
    ExperimentConfig,
    ScheduleConfig,
    SourceState,
    StationModel,
    TrialRecord,
)

FORMAT_VERSION = 1

RECORD_FIELDS = (
    "index",
    "start_time_s",
    "duration_s",
    "x",
    "y",
    "n_pp",
    "n_pm",
    "n_mp",
    "n_mm",
    "singles",
    "ss_coinc",
)

SERIES_HEADER = "elapsed_s,S,sigma_stat,lr_sigma,z_A0,z_A1,z_B0,z_B1"


class ConfigError(ValueError):
    """Configuration file problem; names the offending key when known."""


class RecordFormatError(ValueError):
    """Malformed or invalid record stream; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# ---------------------------------------------------------------------------
# trial records (JSON Lines)
# ---------------------------------------------------------------------------


def record_to_dict(rec: TrialRecord) -> dict:
    return {
        "index": rec.index,
        "start_time_s": rec.start_time,
        "duration_s": rec.duration,
        "x": rec.x,
        "y": rec.y,
        "n_pp": rec.counts[0],
        "n_pm": rec.counts[1],
        "n_mp": rec.counts[2],
        "n_mm": rec.counts[3],
        "singles": list(rec.singles),
        "ss_coinc": list(rec.same_station_coinc),
    }


def write_records(records, destination) -> int:
    """Write records as JSON Lines; returns the number of bytes written."""
    text = "".join(json.dumps(record_to_dict(r)) + "\n" for r in records)
    data = text.encode("utf-8")
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        Path(destination).write_bytes(data)
    return len(data)


def _parse_record_line(obj: dict, line: int) -> TrialRecord:
    if not isinstance(obj, dict):
        raise RecordFormatError(line, "record must be a JSON object")
    unknown = set(obj) - set(RECORD_FIELDS)
    if unknown:
        raise RecordFormatError(line, f"unknown field(s): {sorted(unknown)}")
    missing = set(RECORD_FIELDS) - set(obj)
    if missing:
        raise RecordFormatError(line, f"missing field(s): {sorted(missing)}")
    try:
        rec = TrialRecord(
            index=int(obj["index"]),
            start_time=float(obj["start_time_s"]),
            duration=float(obj["duration_s"]),
            x=int(obj["x"]),
            y=int(obj["y"]),
            counts=(
                int(obj["n_pp"]),
                int(obj["n_pm"]),
                int(obj["n_mp"]),
                int(obj["n_mm"]),
            ),
            singles=tuple(int(v) for v in obj["singles"]),
            same_station_coinc=tuple(int(v) for v in obj["ss_coinc"]),
        )
    except (TypeError, ValueError) as exc:
        raise RecordFormatError(line, str(exc)) from exc
    if len(rec.singles) != 4:
        raise RecordFormatError(line, "singles must hold four entries")
    if len(rec.same_station_coinc) != 2:
        raise RecordFormatError(line, "ss_coinc must hold two entries")
    return rec


def read_records(source) -> list[TrialRecord]:
    """Read and validate a JSON Lines record stream."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise RecordFormatError(lineno, f"invalid JSON: {exc.msg}") from exc
        records.append(_parse_record_line(obj, lineno))
    return records


# ---------------------------------------------------------------------------
# configuration (dotted-key text format)
# ---------------------------------------------------------------------------


def _parse_float(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise ValueError(f"expected a number, got {raw!r}") from exc
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {raw!r}")
    return value


def _parse_int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"expected an integer, got {raw!r}") from exc


def _parse_pair(raw) -> list[float]:
    if isinstance(raw, (list, tuple)):
        values = [float(v) for v in raw]
    else:
        values = [_parse_float(part) for part in str(raw).split(",")]
    if len(values) != 2:
        raise ValueError(f"expected two comma-separated values, got {raw!r}")
    return values


def _parse_order(raw) -> tuple[tuple[int, int], ...]:
    if isinstance(raw, (list, tuple)):
        tokens = list(raw)
    else:
        tokens = [t.strip() for t in str(raw).split(",")]
    pairs = []
    for tok in tokens:
        if isinstance(tok, (list, tuple)) and len(tok) == 2:
            pairs.append((int(tok[0]), int(tok[1])))
            continue
        tok = str(tok)
        if len(tok) != 2 or tok[0] not in "01" or tok[1] not in "01":
            raise ValueError(f"setting pairs must look like 00,01,11,10; got {tok!r}")
        pairs.append((int(tok[0]), int(tok[1])))
    return tuple(pairs)


def _parse_choice(options):
    def parse(raw):
        value = str(raw).strip()
        if value not in options:
            raise ValueError(f"must be one of {options}, got {value!r}")
        return value

    return parse


# key -> (parser, formatter); degrees in files, radians in memory.
_KEY_PARSERS = {
    "source.visibility": _parse_float,
    "source.phase_deg": _parse_float,
    "source.pair_rate_hz": _parse_float,
    "drift.kind": _parse_choice(DRIFT_KINDS),
    "drift.slope_per_s": _parse_float,
    "drift.step_sigma_per_sqrt_s": _parse_float,
    "drift.floor": _parse_float,
    "schedule.order": _parse_order,
    "schedule.block_duration_s": _parse_float,
    "schedule.repetitions": _parse_int,
    "schedule.mode": _parse_choice(ACQUISITION_MODES),
    "accidental_rate_hz": _parse_float,
    "coincidence_window_s": _parse_float,
    "seed": _parse_int,
}
for _st in ("alice", "bob"):
    _KEY_PARSERS.update(
        {
            f"{_st}.hwp_deg": _parse_pair,
            f"{_st}.motor_sigma_deg": _parse_float,
            f"{_st}.motor_model": _parse_choice(MOTOR_MODELS),
            f"{_st}.backlash_offset_deg": _parse_float,
            f"{_st}.coupling_kappa": _parse_float,
            f"{_st}.detector_eff": _parse_pair,
            f"{_st}.attenuator": _parse_pair,
            f"{_st}.dark_rate_hz": _parse_float,
        }
    )

KNOWN_KEYS = tuple(sorted(_KEY_PARSERS))


def config_to_mapping(config: ExperimentConfig) -> dict:
    """Flatten a config to the dotted-key representation used in files."""
    deg = math.degrees
    mapping = {
        "source.visibility": config.source.visibility,
        "source.phase_deg": deg(config.source.phase),
        "source.pair_rate_hz": config.source.pair_rate,
        "drift.kind": config.drift.kind,
        "drift.slope_per_s": config.drift.slope,
        "drift.step_sigma_per_sqrt_s": config.drift.step_sigma,
        "drift.floor": config.drift.floor,
        "schedule.order": tuple(f"{x}{y}" for x, y in config.schedule.setting_order),
        "schedule.block_duration_s": config.schedule.block_duration,
        "schedule.repetitions": config.schedule.repetitions,
        "schedule.mode": config.schedule.acquisition_mode,
        "accidental_rate_hz": config.accidental_rate,
        "coincidence_window_s": config.coincidence_window,
        "seed": config.rng_seed,
    }
    for name in ("alice", "bob"):
        st: StationModel = getattr(config, name)
        mapping.update(
            {
                f"{name}.hwp_deg": [deg(v) for v in st.hwp_targets],
                f"{name}.motor_sigma_deg": deg(st.motor_sigma),
                f"{name}.motor_model": st.motor_model,
                f"{name}.backlash_offset_deg": deg(st.backlash_offset),
                f"{name}.coupling_kappa": st.coupling_kappa,
                f"{name}.detector_eff": list(st.detector_eff),
                f"{name}.attenuator": list(st.attenuator),
                f"{name}.dark_rate_hz": st.dark_rate,
            }
        )
    return mapping


def _station_from_mapping(mapping: dict, name: str) -> StationModel:
    rad = math.radians
    return StationModel(
        hwp_targets=tuple(rad(v) for v in mapping[f"{name}.hwp_deg"]),
        motor_sigma=rad(mapping[f"{name}.motor_sigma_deg"]),
        motor_model=mapping[f"{name}.motor_model"],
        backlash_offset=rad(mapping[f"{name}.backlash_offset_deg"]),
        coupling_kappa=mapping[f"{name}.coupling_kappa"],
        detector_eff=tuple(mapping[f"{name}.detector_eff"]),
        attenuator=tuple(mapping[f"{name}.attenuator"]),
        dark_rate=mapping[f"{name}.dark_rate_hz"],
    )


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """Build a validated config from a complete dotted-key mapping."""
    full = config_to_mapping(ExperimentConfig())
    unknown = set(mapping) - set(full)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    full.update(mapping)
    try:
        return ExperimentConfig(
            source=SourceState(
                visibility=full["source.visibility"],
                phase=math.radians(full["source.phase_deg"]),
                pair_rate=full["source.pair_rate_hz"],
            ),
            drift=DriftModel(
                kind=full["drift.kind"],
                slope=full["drift.slope_per_s"],
                step_sigma=full["drift.step_sigma_per_sqrt_s"],
                floor=full["drift.floor"],
            ),
            alice=_station_from_mapping(full, "alice"),
            bob=_station_from_mapping(full, "bob"),
            schedule=ScheduleConfig(
                setting_order=_parse_order(full["schedule.order"]),
                block_duration=full["schedule.block_duration_s"],
                repetitions=full["schedule.repetitions"],
                acquisition_mode=full["schedule.mode"],
            ),
            accidental_rate=full["accidental_rate_hz"],
            coincidence_window=full["coincidence_window_s"],
            rng_seed=full["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse dotted-key config text; unknown keys and bad values are rejected."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in mapping:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            mapping[key] = _KEY_PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {exc}") from exc
    try:
        return config_from_mapping(mapping)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(source) -> ExperimentConfig:
    """Parse a config from a path or file-like object."""
    if hasattr(source, "read"):
        return parse_config_text(source.read())
    return parse_config_text(Path(source).read_text(encoding="utf-8"))


def _format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(c)) reproduces c."""
    mapping = config_to_mapping(config)
    lines = [f"# format_version: {FORMAT_VERSION}"]
    lines += [f"{key} = {_format_value(mapping[key])}" for key in KNOWN_KEYS]
    return "\n".join(lines) + "\n"


def set_mapping_value(mapping: dict, key: str, raw: str) -> None:
    """Set one dotted key, supporting element indexing like detector_eff[1]."""
    base, index = key, None
    if key.endswith("]") and "[" in key:
        base, bracket = key.rsplit("[", 1)
        try:
            index = int(bracket[:-1])
        except ValueError as exc:
            raise ConfigError(f"bad index in key {key!r}") from exc
    if base not in _KEY_PARSERS:
        raise ConfigError(f"unknown key {base!r}")
    if index is None:
        mapping[base] = _KEY_PARSERS[base](raw)
        return
    if _KEY_PARSERS[base] is not _parse_pair:
        raise ConfigError(f"key {base!r} is not indexable")
    if index not in (0, 1):
        raise ConfigError(f"index out of range in key {key!r}")
    current = list(mapping.get(base, config_to_mapping(ExperimentConfig())[base]))
    current[index] = _parse_float(raw)
    mapping[base] = current


# ---------------------------------------------------------------------------
# run metadata sidecar, analysis report, series CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunBundle:
    config: ExperimentConfig
    records_path: Path
    seed: int
    created_utc: str
    warnings: tuple[str, ...]
    tool_version: str


def metadata_path(records_path) -> Path:
    return Path(str(records_path) + ".meta.json")


def write_run_metadata(records_path, config: ExperimentConfig, warnings=()) -> Path:
    from . import __version__

    payload = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "seed": config.rng_seed,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "warnings": list(warnings),
        "config": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in config_to_mapping(config).items()
        },
    }
    path = metadata_path(records_path)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def read_run_metadata(records_path) -> RunBundle | None:
    path = metadata_path(records_path)
    if not path.exists():
        return None
    payload = json.loads(path.read_text(encoding="utf-8"))
    config = config_from_mapping(payload["config"])
    if config.rng_seed != payload["seed"]:
        raise ConfigError("run metadata seed does not match its config seed")
    return RunBundle(
        config=config,
        records_path=Path(records_path),
        seed=payload["seed"],
        created_utc=payload["created_utc"],
        warnings=tuple(payload.get("warnings", ())),
        tool_version=payload.get("tool_version", "unknown"),
    )


def report_to_dict(report) -> dict:
    sig = report.signaling
    return {
        "format_version": FORMAT_VERSION,
        "S": report.S,
        "sigma_stat": report.sigma_stat,
        "sigma_syst": report.sigma_syst,
        "correlators": list(report.correlators),
        "signaling": {
            "xi": sig.xi,
            "dof": sig.dof,
            "log_p": sig.log_p,
            "log10_p": sig.log_p / math.log(10.0),
            "sigma": sig.sigma,
            "naive": [
                {
                    "label": c.label,
                    "s_hat": c.s_hat,
                    "sigma_hat": c.sigma_hat,
                    "z": c.z,
                }
                for c in sig.naive
            ],
        },
        "accidental_rate_hz": report.accidental_rate,
    }


def series_to_csv(points) -> str:
    lines = [f"# format_version: {FORMAT_VERSION}", SERIES_HEADER]
    for p in points:
        values = [p.elapsed, p.S, p.sigma_stat, p.lr_sigma, *p.z]
        lines.append(",".join(repr(float(v)) for v in values))
    return "\n".join(lines) + "\n"


def write_text_atomic(path, text: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
