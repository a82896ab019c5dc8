"""Estimators and hypothesis tests for CHSH coincidence counts.

Counts are modeled as independent Poisson variables per outcome channel.
The headline diagnostic is a likelihood-ratio test of the nonsignaling
conditions: the constrained fit lives on the eight-parameter polytope of
marginals plus (+,+) joints (see :mod:`bellsim.kernels`), the unconstrained
fit uses the raw per-setting frequencies, and the gap statistic

    xi = -2 (log L - log L0) = 2 sum n log(n / (N p*))

is chi-square distributed with four degrees of freedom under the null.
p-values and the equivalent two-sided normal significance are evaluated in
log space throughout so that arbitrarily significant signaling (p far below
the smallest float) still reports a finite sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx

from . import kernels
from .model import CHSH_SIGNS, AnalyzerAngles, SourceState, chsh_hwp_gradient

SETTINGS = ((0, 0), (0, 1), (1, 0), (1, 1))

_LOG2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)


class MissingSettingError(ValueError):
    """Raised when a counts table lacks events for one or more setting pairs."""

    def __init__(self, missing: list[tuple[int, int]]):
        self.missing = list(missing)
        pairs = ", ".join(f"(x={x}, y={y})" for x, y in self.missing)
        super().__init__(f"no events for setting pair(s): {pairs}")


class NonConvergenceError(RuntimeError):
    """Constrained MLE failed to converge; carries the best iterate found."""

    def __init__(self, message: str, params: "NSParams", log_likelihood: float):
        super().__init__(message)
        self.params = params
        self.log_likelihood = log_likelihood


@dataclass(frozen=True)
class CountsTable:
    """Aggregated 4x4 coincidence counts, indexed [x, y, a, b].

    Outcome index 0 means +1 and index 1 means -1, so ``counts[x, y, 0, 1]``
    counts (a=+1, b=-1) events under setting pair (x, y).
    """

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.shape != (2, 2, 2, 2):
            raise ValueError(f"counts must have shape (2,2,2,2), got {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", arr.astype(np.int64))

    @property
    def totals(self) -> np.ndarray:
        """Per-setting totals N[x][y]."""
        return self.counts.sum(axis=(2, 3))

    def require_complete(self) -> None:
        totals = self.totals
        missing = [(x, y) for (x, y) in SETTINGS if totals[x, y] == 0]
        if missing:
            raise MissingSettingError(missing)

    def scaled(self, factor: int) -> "CountsTable":
        return CountsTable(self.counts * int(factor))


@dataclass(frozen=True)
class NSParams:
    """Nonsignaling correlation: outcome +1 marginals plus (+,+) joints."""

    a0: float
    a1: float
    b0: float
    b1: float
    c00: float
    c01: float
    c10: float
    c11: float

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "NSParams":
        return cls(*(float(v) for v in theta))

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.a0, self.a1, self.b0, self.b1, self.c00, self.c01, self.c10, self.c11]
        )

    def cell_probabilities(self) -> np.ndarray:
        """All sixteen cell probabilities as an (x, y, a, b) array."""
        cells = kernels.A_CELLS @ self.to_vector() + kernels.B_CELLS
        return cells.reshape(2, 2, 2, 2)

    def is_feasible(self, tol: float = 1e-12) -> bool:
        return bool(self.cell_probabilities().min() >= -tol)


@dataclass(frozen=True)
class NaiveCondition:
    """One empirical nonsignaling condition with its binomial z-score."""

    label: str
    s_hat: float
    sigma_hat: float
    z: float


@dataclass(frozen=True)
class SignalingReport:
    xi: float
    dof: int
    log_p: float
    sigma: float
    naive: tuple[NaiveCondition, ...]


@dataclass(frozen=True)
class AnalysisReport:
    S: float
    sigma_stat: float
    sigma_syst: float | None
    signaling: SignalingReport
    correlators: tuple[float, float, float, float]
    accidental_rate: float | None = None


def tabulate(records) -> CountsTable:
    """Aggregate trial records into a complete counts table.

    Raises :class:`MissingSettingError` when any setting pair has zero total.
    """
    counts = np.zeros((2, 2, 2, 2), dtype=np.int64)
    for rec in records:
        counts[rec.x, rec.y] += np.asarray(rec.counts, dtype=np.int64).reshape(2, 2)
    table = CountsTable(counts)
    table.require_complete()
    return table


def estimate_chsh(table: CountsTable) -> tuple[np.ndarray, float]:
    """Plug-in correlators and CHSH value: E(x,y) = sum ab n / N."""
    table.require_complete()
    n = table.counts
    e = np.empty((2, 2))
    for x in range(2):
        for y in range(2):
            num = n[x, y, 0, 0] - n[x, y, 0, 1] - n[x, y, 1, 0] + n[x, y, 1, 1]
            e[x, y] = num / n[x, y].sum()
    s = sum(CHSH_SIGNS[x][y] * e[x, y] for x in range(2) for y in range(2))
    return e, float(s)


def sigma_stat(table: CountsTable) -> float:
    """Poisson error propagation through the CHSH estimator.

    Each of the sixteen counts is treated as independent Poisson, giving
    Var E(x,y) = sum_ab n (ab - E)^2 / N^2 and sigma_S in quadrature.
    """
    table.require_complete()
    n = table.counts
    e, _ = estimate_chsh(table)
    var = 0.0
    ab = np.array([[1.0, -1.0], [-1.0, 1.0]])
    for x in range(2):
        for y in range(2):
            total = n[x, y].sum()
            var += float(np.sum(n[x, y] * (ab - e[x, y]) ** 2)) / total**2
    return math.sqrt(var)


def naive_signaling(table: CountsTable) -> tuple[NaiveCondition, ...]:
    """Per-condition marginal differences with binomial standard errors.

    A-side condition x compares Alice's +1 frequency between Bob's settings;
    B-side conditions are symmetric.  z is zero when the standard error is.
    """
    table.require_complete()
    n = table.counts
    totals = table.totals
    out = []
    for station, idx in (("A", 0), ("A", 1), ("B", 0), ("B", 1)):
        if station == "A":
            plus = [n[idx, y, 0, :].sum() for y in range(2)]
            ns = [totals[idx, y] for y in range(2)]
        else:
            plus = [n[x, idx, :, 0].sum() for x in range(2)]
            ns = [totals[x, idx] for x in range(2)]
        p = [plus[k] / ns[k] for k in range(2)]
        s_hat = p[0] - p[1]
        var = sum(p[k] * (1.0 - p[k]) / ns[k] for k in range(2))
        sig = math.sqrt(var)
        z = s_hat / sig if sig > 0.0 else 0.0
        out.append(NaiveCondition(f"{station}{idx}", float(s_hat), sig, float(z)))
    return tuple(out)


def _poisson_exposure_term(table: CountsTable) -> float:
    """Profile log-likelihood contribution of the per-setting Poisson rates,
    sum over settings of (N log N - N); shared by both fits."""
    totals = table.totals.astype(float)
    return float(np.sum(totals * np.log(totals) - totals))


def loglike_unconstrained(table: CountsTable) -> float:
    """Maximized log-likelihood with free per-setting frequencies."""
    table.require_complete()
    n = table.counts.astype(float)
    totals = table.totals.astype(float)[:, :, None, None]
    mask = n > 0
    term = float(np.sum(n[mask] * np.log((n / totals)[mask])))
    return term + _poisson_exposure_term(table)


def ns_mle(table: CountsTable) -> tuple[NSParams, float]:
    """Maximum likelihood over the nonsignaling polytope.

    Returns the fitted parameters and the log-likelihood including the
    profiled Poisson exposure terms, directly comparable with
    :func:`loglike_unconstrained`.
    """
    table.require_complete()
    counts16 = table.counts.astype(np.float64).reshape(16)
    theta, f, status = kernels.solve_ns_mle(counts16)
    params = NSParams.from_vector(theta)
    logl = f + _poisson_exposure_term(table)
    if status != kernels.STATUS_OK:
        raise NonConvergenceError(
            "constrained MLE did not converge within the iteration budget",
            params,
            logl,
        )
    return params, logl


def lr_test(table: CountsTable) -> SignalingReport:
    """Likelihood-ratio test of the nonsignaling conditions (dof = 4)."""
    params, logl = ns_mle(table)
    logl0 = loglike_unconstrained(table)
    xi = max(0.0, 2.0 * (logl0 - logl))
    log_p = chi2_log_survival(xi, 4)
    return SignalingReport(
        xi=xi,
        dof=4,
        log_p=log_p,
        sigma=sigma_from_log_p(log_p),
        naive=naive_signaling(table),
    )


def chi2_log_survival(xi: float, dof: int = 4) -> float:
    """log of the chi-square survival probability Prob(x >= xi), even dof.

    For even dof = 2m the survival function is the finite Poisson sum
    exp(-xi/2) * sum_{k<m} (xi/2)^k / k!, evaluated here fully in log space
    so it stays finite for xi up to 1e6 and beyond.
    """
    xi = float(xi)
    if not math.isfinite(xi) or xi < 0.0:
        raise ValueError(f"xi must be nonnegative, got {xi!r}")
    if dof <= 0 or dof % 2 != 0:
        raise ValueError(f"dof must be a positive even integer, got {dof!r}")
    if xi == 0.0:
        return 0.0
    half = 0.5 * xi
    m = dof // 2
    log_half = math.log(half)
    log_terms = []
    log_fact = 0.0
    for k in range(m):
        if k > 0:
            log_fact += math.log(k)
        log_terms.append(k * log_half - log_fact)
    peak = max(log_terms)
    acc = sum(math.exp(t - peak) for t in log_terms)
    return -half + peak + math.log(acc)


def _log_two_sided_normal(s: float) -> float:
    """log Prob(|x| > s) for standard normal x, stable for huge s."""
    z = s / _SQRT2
    return math.log(erfcx(z)) - z * z


def sigma_from_log_p(log_p: float) -> float:
    """Equivalent two-sided normal significance for a log p-value.

    Solves log Prob(|x| > s) = log_p by Newton iteration on the log survival
    function, seeded from the asymptotic expansion -2 log p ~ s^2 +
    log(pi s^2 / 2); accurate to better than 1e-9 relative down to
    log_p = -1e6.
    """
    log_p = float(log_p)
    if not math.isfinite(log_p) or log_p > 0.0:
        raise ValueError(f"log_p must be <= 0, got {log_p!r}")
    if log_p == 0.0:
        return 0.0
    if log_p > -1e-8:
        # Prob(|x| > s) ~ 1 - s sqrt(2/pi) for small s.
        return -log_p * math.sqrt(math.pi / 2.0)
    u = -2.0 * log_p
    if u > 3.0:
        s = math.sqrt(max(u - math.log(math.pi * u / 2.0), 1e-12))
    else:
        s = math.sqrt(u) * 0.5
    for _ in range(60):
        z = s / _SQRT2
        g = math.log(erfcx(z)) - z * z - log_p
        # d/ds log erfc(s/sqrt 2) = -sqrt(2/pi) / erfcx(s/sqrt 2)
        dg = -math.sqrt(2.0 / math.pi) / erfcx(z)
        step = g / dg
        s_new = float(s - step)
        if s_new <= 0.0:
            s_new = 0.5 * s
        if abs(s_new - s) <= 1e-12 * max(1.0, s):
            return s_new
        s = s_new
    return s


@dataclass(frozen=True)
class SeriesPoint:
    elapsed: float
    S: float
    sigma_stat: float
    lr_sigma: float
    z: tuple[float, float, float, float]


@dataclass(frozen=True)
class SeriesResult:
    points: tuple[SeriesPoint, ...]
    gaps: tuple[float, ...] = field(default_factory=tuple)


def cumulative_series(records, step: float) -> SeriesResult:
    """Prefix analysis at every multiple of ``step`` seconds.

    Each point analyzes the records completed by that elapsed time; prefixes
    still missing a setting pair are reported as gaps instead of points.
    """
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step!r}")
    records = sorted(records, key=lambda r: r.start_time + r.duration)
    if not records:
        return SeriesResult(points=())
    end_time = records[-1].start_time + records[-1].duration
    n_steps = max(1, math.ceil(end_time / step - 1e-9))
    points = []
    gaps = []
    for k in range(1, n_steps + 1):
        cut = k * step
        prefix = [r for r in records if r.start_time + r.duration <= cut + 1e-9]
        try:
            table = tabulate(prefix)
        except MissingSettingError:
            gaps.append(cut)
            continue
        _, s = estimate_chsh(table)
        report = lr_test(table)
        points.append(
            SeriesPoint(
                elapsed=cut,
                S=s,
                sigma_stat=sigma_stat(table),
                lr_sigma=report.sigma,
                z=tuple(c.z for c in report.naive),
            )
        )
    return SeriesResult(points=tuple(points), gaps=tuple(gaps))


def motor_budget(
    motor_sigma: float,
    repetitions: int,
    state: SourceState | None = None,
    angles: AnalyzerAngles | None = None,
) -> float:
    """Systematic CHSH uncertainty from finite wave-plate repositioning.

    Each of the eight per-sweep plate positionings contributes its correlator
    sensitivity independently; repeating the settings averages the errors,
    suppressing the budget by sqrt(repetitions).  At the optimal angles this
    reduces to 8 V motor_sigma / sqrt(repetitions).
    """
    if motor_sigma < 0.0:
        raise ValueError("motor_sigma must be nonnegative")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if state is None:
        state = SourceState()
    grads = chsh_hwp_gradient(state, angles)
    total = float(np.sum(grads**2))
    return math.sqrt(total) * motor_sigma / math.sqrt(repetitions)


def systematic_budget(config) -> float:
    """Motor budget for an experiment config with per-station motor sigmas."""
    angles = AnalyzerAngles(
        alice_hwp=tuple(config.alice.hwp_targets),
        bob_hwp=tuple(config.bob.hwp_targets),
    )
    grads = chsh_hwp_gradient(config.source, angles)
    sigmas = np.array([config.alice.motor_sigma, config.bob.motor_sigma])
    total = float(np.sum(grads**2 * sigmas[None, None, :] ** 2))
    return math.sqrt(total) / math.sqrt(config.schedule.repetitions)


def analyze_records(records, config=None) -> AnalysisReport:
    """Full analysis of a record stream: estimate, errors, signaling test."""
    from .simulator import accidental_estimate

    records = list(records)
    table = tabulate(records)
    e, s = estimate_chsh(table)
    report = lr_test(table)
    sigma_syst = systematic_budget(config) if config is not None else None
    accidental = accidental_estimate(records)
    return AnalysisReport(
        S=s,
        sigma_stat=sigma_stat(table),
        sigma_syst=sigma_syst,
        signaling=report,
        correlators=tuple(float(e[x, y]) for x in range(2) for y in range(2)),
        accidental_rate=accidental,
    )
