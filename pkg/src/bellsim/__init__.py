"""bellsim: photonic CHSH experiment simulator and signaling diagnostics."""

__version__ = "0.1.0"

from .model import (
    TSIRELSON,
    AnalyzerAngles,
    SourceState,
    chsh_hwp_gradient,
    chsh_value,
    correlator,
    outcome_probabilities,
)
from .simulator import (
    DriftModel,
    ExperimentConfig,
    ScheduleConfig,
    StationModel,
    TrialRecord,
    accidental_estimate,
    apply_motor_error,
    calibrate_attenuators,
    default_config,
    expected_rates,
    run_experiment,
)
from .stats import (
    AnalysisReport,
    CountsTable,
    MissingSettingError,
    NonConvergenceError,
    NSParams,
    SignalingReport,
    analyze_records,
    chi2_log_survival,
    cumulative_series,
    estimate_chsh,
    lr_test,
    motor_budget,
    naive_signaling,
    ns_mle,
    sigma_from_log_p,
    sigma_stat,
    systematic_budget,
    tabulate,
)

__all__ = [
    "TSIRELSON",
    "AnalyzerAngles",
    "SourceState",
    "chsh_hwp_gradient",
    "chsh_value",
    "correlator",
    "outcome_probabilities",
    "DriftModel",
    "ExperimentConfig",
    "ScheduleConfig",
    "StationModel",
    "TrialRecord",
    "accidental_estimate",
    "apply_motor_error",
    "calibrate_attenuators",
    "default_config",
    "expected_rates",
    "run_experiment",
    "AnalysisReport",
    "CountsTable",
    "MissingSettingError",
    "NonConvergenceError",
    "NSParams",
    "SignalingReport",
    "analyze_records",
    "chi2_log_survival",
    "cumulative_series",
    "estimate_chsh",
    "lr_test",
    "motor_budget",
    "naive_signaling",
    "ns_mle",
    "sigma_from_log_p",
    "sigma_stat",
    "systematic_budget",
    "tabulate",
]
