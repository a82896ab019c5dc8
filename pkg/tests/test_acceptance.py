"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines as they complete.
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats as scipy_stats

from bellsim import (
    SourceState,
    StationModel,
    TSIRELSON,
    analyze_records,
    calibrate_attenuators,
    chi2_log_survival,
    chsh_value,
    estimate_chsh,
    motor_budget,
    run_experiment,
    sigma_from_log_p,
    tabulate,
)
from bellsim.cli import preset_text
from bellsim.io import parse_config_text
from bellsim.simulator import ExperimentConfig, ScheduleConfig
from bellsim.stats import CountsTable, lr_test, ns_mle
from conftest import spawn_seed
from oracles import (
    chi2_log_sf_quadrature,
    cvxpy_ns_mle,
    normal_two_sided_log_p,
)


def _criterion(number: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    print(f"criterion {number}: {verdict} - {detail}")
    assert passed, f"criterion {number} failed: {detail}"


def _preset(name: str):
    return parse_config_text(preset_text(name))


def _lr_sigma(config) -> float:
    return lr_test(tabulate(run_experiment(config).records)).sigma


def test_criterion_1_model_exactness():
    s_perfect = chsh_value(SourceState(visibility=1.0))
    err_perfect = abs(s_perfect - TSIRELSON)
    s_real = chsh_value(SourceState(visibility=0.994))
    err_real = abs(s_real - 2.81146)
    agreement = abs(s_real - 2.8117) / 0.0032
    passed = err_perfect <= 1e-12 and err_real <= 1e-5
    _criterion(
        1,
        passed,
        f"S(V=1) off by {err_perfect:.2e}; S(0.994) = {s_real:.6f} "
        f"(reported: {agreement:.2f} sigma_stat from the measured 2.8117)",
    )


def test_criterion_2_statistical_uncertainty_scale():
    hits = 0
    n_seeds = 100
    values = []
    for k in range(n_seeds):
        config = ExperimentConfig(rng_seed=spawn_seed(1002, k))
        report = analyze_records(run_experiment(config).records, config)
        values.append(report.sigma_stat)
        if 0.0025 <= report.sigma_stat <= 0.0040:
            hits += 1
    _criterion(
        2,
        hits >= 95,
        f"sigma_stat in [0.0025, 0.0040] for {hits}/{n_seeds} seeds "
        f"(median {np.median(values):.5f})",
    )


def test_criterion_3_null_calibration():
    n_runs = 1000
    xis, pvals, sigmas = [], [], []
    config = ExperimentConfig(schedule=ScheduleConfig(block_duration=50.0))
    for k in range(n_runs):
        records = run_experiment(replace(config, rng_seed=spawn_seed(1003, k))).records
        report = lr_test(tabulate(records))
        xis.append(report.xi)
        pvals.append(math.exp(report.log_p))
        sigmas.append(report.sigma)
    mean_xi = float(np.mean(xis))
    ks = scipy_stats.kstest(pvals, "uniform")
    frac_over_3 = float(np.mean(np.array(sigmas) > 3.0))
    passed = abs(mean_xi - 4.0) <= 0.3 and ks.pvalue > 0.01 and frac_over_3 <= 0.01
    _criterion(
        3,
        passed,
        f"mean xi = {mean_xi:.3f} (target 4.0 +- 0.3), KS p = {ks.pvalue:.3f}, "
        f"P(sigma > 3) = {frac_over_3:.3%}",
    )


def test_criterion_4_motor_budget_table():
    b_02_1 = motor_budget(math.radians(0.2), 1)
    b_002_1 = motor_budget(math.radians(0.02), 1)
    b_002_200 = motor_budget(math.radians(0.02), 200)
    bands = (
        0.014 <= b_02_1 <= 0.042
        and 0.0014 <= b_002_1 <= 0.0042
        and 1.0e-4 <= b_002_200 <= 3.0e-4
    )
    rep_scaling = abs(b_002_200 * math.sqrt(200) / b_002_1 - 1.0) <= 1e-12
    lin_scaling = abs(b_02_1 / b_002_1 - 10.0) <= 1e-10
    _criterion(
        4,
        bands and rep_scaling and lin_scaling,
        f"budget(0.2deg,1) = {b_02_1:.4f}, budget(0.02deg,1) = {b_002_1:.5f}, "
        f"budget(0.02deg,200) = {b_002_200:.2e}; 1/sqrt(reps) and linear "
        "scalings exact",
    )


def test_criterion_5_apparent_signaling_growth():
    base = _preset("experiment_a")
    n_seeds = 100
    full_sigmas, ratios = [], []
    for k in range(n_seeds):
        seed = spawn_seed(1005, k)
        sigma_t = _lr_sigma(replace(base, rng_seed=seed))
        quadruple = replace(
            base,
            rng_seed=seed,
            schedule=replace(base.schedule, block_duration=4000.0),
        )
        sigma_4t = _lr_sigma(quadruple)
        full_sigmas.append(sigma_t)
        ratios.append(sigma_4t / sigma_t)
    frac_over_20 = float(np.mean(np.array(full_sigmas) > 20.0))
    median_ratio = float(np.median(ratios))
    passed = frac_over_20 >= 0.90 and 1.7 <= median_ratio <= 2.3
    _criterion(
        5,
        passed,
        f"lr sigma > 20 in {frac_over_20:.0%} of seeds "
        f"(median {np.median(full_sigmas):.1f}); 4x time ratio median "
        f"{median_ratio:.3f} (target 2.0 +- 0.3)",
    )


def test_criterion_6_remediation_ordering():
    n_seeds = 100
    medians = {}
    for name in ("experiment_a", "experiment_b", "experiment_c", "experiment_d"):
        base = _preset(name)
        sigmas = [
            _lr_sigma(replace(base, rng_seed=spawn_seed(1006, name, k)))
            for k in range(n_seeds)
        ]
        medians[name] = float(np.median(sigmas))
    ordered = (
        medians["experiment_a"]
        > medians["experiment_b"]
        > medians["experiment_c"]
        > medians["experiment_d"]
    )
    passed = ordered and medians["experiment_d"] <= 2.0
    _criterion(
        6,
        passed,
        "median lr sigma a-d: "
        + ", ".join(f"{medians[n]:.2f}" for n in sorted(medians)),
    )


def test_criterion_7_calibration_procedure():
    n_seeds = 100
    ratios = []
    all_converged = True
    max_iters = 0
    for k in range(n_seeds):
        seed = spawn_seed(1007, k)
        config = ExperimentConfig(
            alice=StationModel(detector_eff=(1.0, 0.8)),
            bob=StationModel(
                hwp_targets=(math.pi / 16, 3 * math.pi / 16),
                detector_eff=(1.0, 0.8),
            ),
            rng_seed=seed,
        )
        result = calibrate_attenuators(config, tolerance=0.01, max_iterations=10)
        all_converged &= result.converged
        max_iters = max(max_iters, *(len(st.iterations) for st in result.stations))
        sigma_pre = _lr_sigma(config)
        sigma_post = _lr_sigma(result.config)
        ratios.append(sigma_post / sigma_pre)
    median_ratio = float(np.median(ratios))
    passed = all_converged and max_iters <= 10 and median_ratio < 0.5
    _criterion(
        7,
        passed,
        f"all calibrations converged within {max_iters} iterations; "
        f"median post/pre lr sigma ratio {median_ratio:.3f}",
    )


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_criterion_8_oracle_equivalence(mle_corpus):
    worst_mle = 0.0
    for table in mle_corpus:
        _, logl = ns_mle(table)
        totals = table.totals.astype(float)
        exposure = float(np.sum(totals * np.log(totals) - totals))
        worst_mle = max(worst_mle, abs((logl - exposure) - cvxpy_ns_mle(table.counts)))

    worst_chi2 = 0.0
    for xi in np.concatenate(
        [np.linspace(0.05, 20.0, 8), np.geomspace(20.0, 1000.0, 8)]
    ):
        ours = chi2_log_survival(float(xi), 4)
        ref = chi2_log_sf_quadrature(float(xi), 4)
        worst_chi2 = max(worst_chi2, abs(ours - ref) / abs(ref))

    worst_sigma = 0.0
    for s in np.linspace(0.5, 100.0, 14):
        back = sigma_from_log_p(normal_two_sided_log_p(float(s)))
        worst_sigma = max(worst_sigma, abs(back - s) / s)

    passed = worst_mle <= 1e-6 and worst_chi2 <= 1e-10 and worst_sigma <= 1e-6
    _criterion(
        8,
        passed,
        f"MLE vs convex oracle {worst_mle:.2e} (<=1e-6); chi2 vs quadrature "
        f"{worst_chi2:.2e} rel (<=1e-10); sigma round-trip {worst_sigma:.2e} "
        "rel (<=1e-6)",
    )


def test_criterion_9_scale_invariance():
    config = ExperimentConfig(
        alice=StationModel(detector_eff=(1.0, 0.97)),
        schedule=ScheduleConfig(block_duration=100.0),
        rng_seed=spawn_seed(1009),
    )
    table = tabulate(run_experiment(config).records)
    _, s1 = estimate_chsh(table)
    xi1 = lr_test(table).xi
    worst_s = 0.0
    worst_xi = 0.0
    for k in (2, 7, 100):
        scaled = CountsTable(table.counts * k)
        _, sk = estimate_chsh(scaled)
        worst_s = max(worst_s, abs(sk - s1))
        xik = lr_test(scaled).xi
        worst_xi = max(worst_xi, abs(xik - k * xi1) / (k * xi1))
    passed = worst_s == 0.0 and worst_xi <= 1e-9
    _criterion(
        9,
        passed,
        f"S exactly invariant (max |dS| = {worst_s}); xi linear in counts to "
        f"{worst_xi:.2e} relative (xi = {xi1:.3f} at k=1)",
    )
