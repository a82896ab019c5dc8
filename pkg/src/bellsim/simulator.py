"""Synthetic CHSH runs: scheduling, systematic-error injection, Poisson counts.

A run walks the setting order for the requested number of sweeps.  Every
block repositions one plate per station with the configured motor error,
evaluates the channel rates (source drift, angle-dependent coupling loss,
per-arm efficiencies and attenuators, dark and accidental backgrounds) and
draws Poisson counts.  Runs are deterministic for a fixed ``rng_seed``.

Two acquisition modes exist.  ``four_detector`` records all four outcome
channels simultaneously, so a common rate fluctuation cancels from the
frequencies.  ``single_detector_sequential`` emulates the older one-detector
stations: every outcome channel gets its own quarter-length sub-block with
fresh plate positionings, so source drift between sub-blocks skews the
apparent correlations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import SourceState, outcome_probabilities

DEFAULT_SETTING_ORDER = ((0, 0), (0, 1), (1, 1), (1, 0))

MOTOR_MODELS = ("gaussian", "uniform", "backlash")
DRIFT_KINDS = ("none", "linear", "random_walk")
ACQUISITION_MODES = ("four_detector", "single_detector_sequential")

_CALIBRATION_STREAM = 0x0CA1


def _check_pair(name: str, pair, low=None, high=None):
    if len(pair) != 2:
        raise ValueError(f"{name} must hold exactly two values")
    for v in pair:
        if not math.isfinite(float(v)):
            raise ValueError(f"{name} entries must be finite")
        if low is not None and not v > low:
            raise ValueError(f"{name} entries must be > {low}, got {v}")
        if high is not None and v > high:
            raise ValueError(f"{name} entries must be <= {high}, got {v}")


@dataclass(frozen=True)
class StationModel:
    """One measurement station: plate targets, motor, couplings, detectors.

    ``detector_eff`` and ``attenuator`` are indexed by outcome (+1 arm first),
    ``coupling_kappa`` is the relative loss per radian of plate mispointing,
    ``dark_rate`` is per detector in Hz.
    """

    hwp_targets: tuple[float, float] = (0.0, math.pi / 8.0)
    motor_sigma: float = 0.0
    motor_model: str = "gaussian"
    backlash_offset: float = 0.0
    coupling_kappa: float = 0.0
    detector_eff: tuple[float, float] = (1.0, 1.0)
    attenuator: tuple[float, float] = (1.0, 1.0)
    dark_rate: float = 500.0

    def __post_init__(self) -> None:
        _check_pair("hwp_targets", self.hwp_targets)
        if self.motor_sigma < 0.0:
            raise ValueError("motor_sigma must be nonnegative")
        if self.motor_model not in MOTOR_MODELS:
            raise ValueError(f"motor_model must be one of {MOTOR_MODELS}")
        if self.coupling_kappa < 0.0:
            raise ValueError("coupling_kappa must be nonnegative")
        _check_pair("detector_eff", self.detector_eff, low=0.0, high=1.0)
        _check_pair("attenuator", self.attenuator, low=0.0, high=1.0)
        if self.dark_rate < 0.0:
            raise ValueError("dark_rate must be nonnegative")


@dataclass(frozen=True)
class DriftModel:
    """Pump-power drift: none, linear in time, or a random walk per block."""

    kind: str = "none"
    slope: float = 0.0
    step_sigma: float = 0.0
    floor: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"drift kind must be one of {DRIFT_KINDS}")
        if self.step_sigma < 0.0:
            raise ValueError("step_sigma must be nonnegative")
        if not self.floor > 0.0:
            raise ValueError("drift floor must be positive")

    def factor_at(self, t: float) -> float:
        """Deterministic drift factor; random walks are advanced by the run."""
        if self.kind == "linear":
            return max(self.floor, 1.0 + self.slope * t)
        if self.kind == "random_walk":
            raise ValueError("random_walk drift is stateful; pass drift_factor")
        return 1.0


@dataclass(frozen=True)
class ScheduleConfig:
    """Measurement plan.

    ``block_duration`` is the total acquisition time per setting for the whole
    run; with N repetitions each setting is revisited N times in interleaved
    sweeps of block_duration / N seconds, keeping the event budget fixed.
    """

    setting_order: tuple[tuple[int, int], ...] = DEFAULT_SETTING_ORDER
    block_duration: float = 1000.0
    repetitions: int = 1
    acquisition_mode: str = "four_detector"

    def __post_init__(self) -> None:
        if sorted(self.setting_order) != sorted(DEFAULT_SETTING_ORDER):
            raise ValueError("setting_order must cover the four pairs exactly once")
        if not self.block_duration > 0.0:
            raise ValueError("block_duration must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.acquisition_mode not in ACQUISITION_MODES:
            raise ValueError(f"acquisition_mode must be one of {ACQUISITION_MODES}")


@dataclass(frozen=True)
class TrialRecord:
    """One contiguous acquisition block."""

    index: int
    start_time: float
    duration: float
    x: int
    y: int
    counts: tuple[int, int, int, int]
    singles: tuple[int, int, int, int]
    same_station_coinc: tuple[int, int]

    def __post_init__(self) -> None:
        if self.x not in (0, 1) or self.y not in (0, 1):
            raise ValueError("settings x, y must be 0 or 1")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        for name, values in (
            ("counts", self.counts),
            ("singles", self.singles),
            ("same_station_coinc", self.same_station_coinc),
        ):
            if any(v < 0 for v in values):
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceState = field(default_factory=SourceState)
    drift: DriftModel = field(default_factory=DriftModel)
    alice: StationModel = field(default_factory=StationModel)
    bob: StationModel = field(
        default_factory=lambda: StationModel(
            hwp_targets=(math.pi / 16.0, 3.0 * math.pi / 16.0)
        )
    )
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    accidental_rate: float = 0.1
    coincidence_window: float = 3e-9
    rng_seed: int = 2020

    def __post_init__(self) -> None:
        if self.accidental_rate < 0.0:
            raise ValueError("accidental_rate must be nonnegative")
        if not self.coincidence_window > 0.0:
            raise ValueError("coincidence_window must be positive")


def default_config(**overrides) -> ExperimentConfig:
    return replace(ExperimentConfig(), **overrides) if overrides else ExperimentConfig()


@dataclass(frozen=True)
class RateTable:
    """Instantaneous rates (Hz): coincidences per channel, singles D1..D4,
    same-station coincidences (Alice pair, Bob pair)."""

    coincidence: np.ndarray
    singles: np.ndarray
    same_station: np.ndarray
    clipped: bool = False


@dataclass
class SimulationRun:
    records: list[TrialRecord]
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def apply_motor_error(
    target: float,
    station: StationModel,
    rng: np.random.Generator,
    previous: float = 0.0,
) -> float:
    """One plate positioning with the station's motor error model.

    gaussian adds N(0, sigma); uniform matches that sigma with a flat window;
    backlash additionally stops short or long by a fixed offset whose sign
    follows the direction of the approach move.
    """
    if station.motor_model == "uniform":
        half = math.sqrt(3.0) * station.motor_sigma
        return target + rng.uniform(-half, half)
    noise = rng.normal(0.0, station.motor_sigma)
    if station.motor_model == "backlash":
        direction = 1.0 if target >= previous else -1.0
        return target + direction * station.backlash_offset + noise
    return target + noise


def _coupling(station: StationModel, actual: float, nominal: float) -> float:
    return max(0.0, 1.0 - station.coupling_kappa * abs(actual - nominal))


def expected_rates(
    config: ExperimentConfig,
    x: int,
    y: int,
    actual_angles: tuple[float, float],
    t: float = 0.0,
    drift_factor: float | None = None,
    nominal_angles: tuple[float, float] | None = None,
) -> RateTable:
    """Channel rates for one block given the actual plate angles.

    Coincidence channel (a, b) gets
    pair_rate * drift * c_A * c_B * P(a,b) * eff_A(a) att_A(a) eff_B(b) att_B(b)
    plus a quarter of the uniform accidental rate and the window-sized dark
    pairings; singles and same-station rates are composed from the same
    efficiencies and dark rates.
    """
    theta_a, theta_b = actual_angles
    if nominal_angles is None:
        nominal_angles = (
            config.alice.hwp_targets[x],
            config.bob.hwp_targets[y],
        )
    if drift_factor is None:
        drift_factor = config.drift.factor_at(t)
    clipped = False

    gain = (
        config.source.pair_rate
        * drift_factor
        * _coupling(config.alice, theta_a, nominal_angles[0])
        * _coupling(config.bob, theta_b, nominal_angles[1])
    )
    probs = outcome_probabilities(config.source, 2.0 * theta_a, 2.0 * theta_b)

    eff_a = np.array(config.alice.detector_eff) * np.array(config.alice.attenuator)
    eff_b = np.array(config.bob.detector_eff) * np.array(config.bob.attenuator)

    # Photon singles: the model marginals are exactly 1/2 per arm.
    singles_photon_a = gain * 0.5 * eff_a
    singles_photon_b = gain * 0.5 * eff_b
    dark_a = config.alice.dark_rate
    dark_b = config.bob.dark_rate
    window = config.coincidence_window

    coinc = gain * probs * np.outer(eff_a, eff_b)
    coinc += config.accidental_rate / 4.0
    for ia in range(2):
        for ib in range(2):
            coinc[ia, ib] += window * (
                dark_a * singles_photon_b[ib]
                + dark_b * singles_photon_a[ia]
                + dark_a * dark_b
            )
    if np.any(coinc < 0.0):
        coinc = np.clip(coinc, 0.0, None)
        clipped = True

    singles = np.concatenate([singles_photon_a + dark_a, singles_photon_b + dark_b])
    if np.any(singles < 0.0):
        singles = np.clip(singles, 0.0, None)
        clipped = True

    full_a = singles_photon_a + dark_a
    full_b = singles_photon_b + dark_b
    same_station = np.array(
        [
            config.accidental_rate + window * full_a[0] * full_a[1],
            config.accidental_rate + window * full_b[0] * full_b[1],
        ]
    )
    return RateTable(coinc, singles, same_station, clipped)


def _sequential_rates(
    config: ExperimentConfig,
    channel: tuple[int, int],
    actual_angles: tuple[float, float],
    nominal_angles: tuple[float, float],
    drift_factor: float,
) -> tuple[float, float, float]:
    """Rates for one sub-block of a single-detector acquisition.

    Only the +1 arm of each station exists; outcome (a, b) is steered onto it
    by rotating the plates an extra 45 degrees, so the channel rate is the
    (+,+) probability at the rotated angles through the +1-arm efficiencies.
    Returns (coincidence, alice single, bob single) in Hz.
    """
    theta_a, theta_b = actual_angles
    gain = (
        config.source.pair_rate
        * drift_factor
        * _coupling(config.alice, theta_a, nominal_angles[0])
        * _coupling(config.bob, theta_b, nominal_angles[1])
    )
    probs = outcome_probabilities(config.source, 2.0 * theta_a, 2.0 * theta_b)
    eff_a = config.alice.detector_eff[0] * config.alice.attenuator[0]
    eff_b = config.bob.detector_eff[0] * config.bob.attenuator[0]
    s_a = gain * 0.5 * eff_a
    s_b = gain * 0.5 * eff_b
    dark_a, dark_b = config.alice.dark_rate, config.bob.dark_rate
    coinc = (
        gain * probs[0, 0] * eff_a * eff_b
        + config.accidental_rate / 4.0
        + config.coincidence_window
        * (dark_a * s_b + dark_b * s_a + dark_a * dark_b)
    )
    return max(0.0, coinc), s_a + dark_a, s_b + dark_b


class _DriftState:
    """Advances the drift factor across blocks; linear drift is evaluated at
    the block midpoint (exact for the integrated intensity)."""

    def __init__(self, drift: DriftModel):
        self.drift = drift
        self.walk = 1.0

    def block_factor(self, start: float, duration: float, rng) -> float:
        if self.drift.kind == "random_walk":
            factor = self.walk
            step = rng.normal(0.0, self.drift.step_sigma * math.sqrt(duration))
            self.walk = max(self.drift.floor, self.walk + step)
            return factor
        return self.drift.factor_at(start + 0.5 * duration)


def run_experiment(config: ExperimentConfig) -> SimulationRun:
    """Generate the full record stream for one seeded run."""
    rng = np.random.default_rng(config.rng_seed)
    schedule = config.schedule
    sub_duration = schedule.block_duration / schedule.repetitions
    drift_state = _DriftState(config.drift)
    records: list[TrialRecord] = []
    warnings: list[str] = []
    clip_seen = False
    prev_a = 0.0
    prev_b = 0.0
    t = 0.0
    index = 0
    sequential = schedule.acquisition_mode == "single_detector_sequential"
    for _ in range(schedule.repetitions):
        for x, y in schedule.setting_order:
            if sequential:
                counts = np.zeros((2, 2), dtype=np.int64)
                singles = np.zeros(4, dtype=np.int64)
                quarter = sub_duration / 4.0
                for ia in range(2):
                    for ib in range(2):
                        target_a = config.alice.hwp_targets[x] + ia * math.pi / 4.0
                        target_b = config.bob.hwp_targets[y] + ib * math.pi / 4.0
                        theta_a = apply_motor_error(target_a, config.alice, rng, prev_a)
                        theta_b = apply_motor_error(target_b, config.bob, rng, prev_b)
                        prev_a, prev_b = theta_a, theta_b
                        factor = drift_state.block_factor(t, quarter, rng)
                        rate, s_a, s_b = _sequential_rates(
                            config,
                            (ia, ib),
                            (theta_a, theta_b),
                            (target_a, target_b),
                            factor,
                        )
                        counts[ia, ib] = rng.poisson(rate * quarter)
                        singles[0] += rng.poisson(s_a * quarter)
                        singles[2] += rng.poisson(s_b * quarter)
                        t += quarter
                ss = (0, 0)
            else:
                target_a = config.alice.hwp_targets[x]
                target_b = config.bob.hwp_targets[y]
                theta_a = apply_motor_error(target_a, config.alice, rng, prev_a)
                theta_b = apply_motor_error(target_b, config.bob, rng, prev_b)
                prev_a, prev_b = theta_a, theta_b
                factor = drift_state.block_factor(t, sub_duration, rng)
                rates = expected_rates(
                    config, x, y, (theta_a, theta_b), drift_factor=factor
                )
                clip_seen |= rates.clipped
                counts = rng.poisson(rates.coincidence * sub_duration)
                singles = rng.poisson(rates.singles * sub_duration)
                ss = tuple(int(v) for v in rng.poisson(rates.same_station * sub_duration))
                t += sub_duration
            records.append(
                TrialRecord(
                    index=index,
                    start_time=t - sub_duration,
                    duration=sub_duration,
                    x=x,
                    y=y,
                    counts=tuple(int(v) for v in counts.reshape(4)),
                    singles=tuple(int(v) for v in singles),
                    same_station_coinc=ss,
                )
            )
            index += 1
    if clip_seen:
        warnings.append("negative channel rates clipped to zero")
    return SimulationRun(records=records, warnings=warnings)


def accidental_estimate(records) -> float:
    """Background coincidence rate from same-station coincidences.

    Total same-station events divided by total duration, averaged over the
    two stations.  Reported for the error budget, never subtracted.
    """
    total_time = 0.0
    total_events = 0
    for rec in records:
        total_time += rec.duration
        total_events += rec.same_station_coinc[0] + rec.same_station_coinc[1]
    if total_time <= 0.0:
        raise ValueError("records carry no acquisition time")
    return total_events / (2.0 * total_time)


@dataclass(frozen=True)
class CalibrationIteration:
    gamma: float
    gamma_prime: float
    attenuators: tuple[float, float]


@dataclass(frozen=True)
class StationCalibration:
    station: str
    iterations: tuple[CalibrationIteration, ...]
    converged: bool


@dataclass(frozen=True)
class CalibrationResult:
    config: ExperimentConfig
    stations: tuple[StationCalibration, StationCalibration]
    converged: bool


def _measure_gamma(
    config: ExperimentConfig,
    station: str,
    plate: float,
    block_seconds: float,
    rng: np.random.Generator,
    prev: list[float],
) -> float:
    """Simulated rate sum through the partner's +1 detector with one station's
    plate commanded to ``plate`` and the partner parked at zero."""
    if station == "alice":
        target_a, target_b = plate, 0.0
    else:
        target_a, target_b = 0.0, plate
    theta_a = apply_motor_error(target_a, config.alice, rng, prev[0])
    theta_b = apply_motor_error(target_b, config.bob, rng, prev[1])
    prev[0], prev[1] = theta_a, theta_b
    rates = expected_rates(
        config, 0, 0, (theta_a, theta_b), nominal_angles=(target_a, target_b)
    )
    if station == "alice":
        lam = rates.coincidence[0, 0] + rates.coincidence[1, 0]
    else:
        lam = rates.coincidence[0, 0] + rates.coincidence[0, 1]
    return rng.poisson(lam * block_seconds) / block_seconds


def calibrate_attenuators(
    config: ExperimentConfig,
    tolerance: float = 0.01,
    block_seconds: float = 1000.0,
    max_iterations: int = 10,
) -> CalibrationResult:
    """Balance the two arms of each station with variable attenuators.

    Compares the coincidence rate sums gamma (plate at 0) and gamma' (plate at
    45 degrees) through the partner's +1 detector; whichever arm runs hotter
    is attenuated by the measured ratio until the relative mismatch falls
    within ``tolerance``.  Transmittances only ever decrease.
    """
    if not tolerance > 0.0:
        raise ValueError("tolerance must be positive")
    if not block_seconds > 0.0:
        raise ValueError("block_seconds must be positive")
    rng = np.random.default_rng(
        np.random.SeedSequence([_CALIBRATION_STREAM, config.rng_seed & 0xFFFFFFFF])
    )
    current = config
    station_reports = []
    all_converged = True
    for station in ("alice", "bob"):
        prev = [0.0, 0.0]
        iterations = []
        converged = False
        for _ in range(max_iterations):
            gamma = _measure_gamma(current, station, 0.0, block_seconds, rng, prev)
            gamma_p = _measure_gamma(
                current, station, math.pi / 4.0, block_seconds, rng, prev
            )
            model = getattr(current, station)
            iterations.append(
                CalibrationIteration(gamma, gamma_p, tuple(model.attenuator))
            )
            mean = 0.5 * (gamma + gamma_p)
            if mean <= 0.0:
                break
            if abs(gamma - gamma_p) / mean <= tolerance:
                converged = True
                break
            ratio = min(gamma, gamma_p) / max(gamma, gamma_p)
            att = list(model.attenuator)
            hot = 0 if gamma > gamma_p else 1
            att[hot] = min(1.0, att[hot] * ratio)
            current = replace(current, **{station: replace(model, attenuator=tuple(att))})
        all_converged &= converged
        station_reports.append(
            StationCalibration(station, tuple(iterations), converged)
        )
    return CalibrationResult(
        config=current, stations=tuple(station_reports), converged=all_converged
    )
