"""Closed-form optical model of the two-photon polarization experiment.

The source emits polarization-entangled pairs whose correlations are
parametrized by a visibility ``V`` and a relative phase ``phi``:

    P(a, b | alpha, beta) = 1/4 * [1 + a*b*V*(cos 2a cos 2b + cos(phi) sin 2a sin 2b)]

where ``alpha``/``beta`` are the analyzer (polarization) angles and the
outcomes are a, b = +/-1.  A half-wave plate at angle ``theta`` rotates the
analyzer to ``2*theta``, so all plate-level quantities carry the factor two.
Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TSIRELSON = 2.0 * math.sqrt(2.0)

# Sign of each correlator in S = E(0,0) - E(0,1) + E(1,0) + E(1,1).
CHSH_SIGNS = ((1.0, -1.0), (1.0, 1.0))


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SourceState:
    """Pair source: interference visibility, relative phase, detected pair rate.

    ``visibility`` scales the interference term (1.0 is a perfect Bell state,
    0.0 a fully mixed pair), ``phase`` is the relative phase between the two
    down-conversion amplitudes in radians, ``pair_rate`` is the detected pair
    rate in Hz with all efficiencies at one.
    """

    visibility: float = 0.994
    phase: float = 0.0
    pair_rate: float = 200.0

    def __post_init__(self) -> None:
        _require_finite("visibility", self.visibility)
        _require_finite("phase", self.phase)
        _require_finite("pair_rate", self.pair_rate)
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must be in [0, 1], got {self.visibility}")
        if not self.pair_rate > 0.0:
            raise ValueError(f"pair_rate must be positive, got {self.pair_rate}")


@dataclass(frozen=True)
class AnalyzerAngles:
    """Half-wave-plate targets for the two settings of each station.

    Defaults are the standard CHSH-optimal plate angles for this state:
    Alice (0, 22.5) degrees and Bob (11.25, 33.75) degrees, i.e. analyzer
    angles (0, 45) and (22.5, 67.5).
    """

    alice_hwp: tuple[float, float] = (0.0, math.pi / 8.0)
    bob_hwp: tuple[float, float] = (math.pi / 16.0, 3.0 * math.pi / 16.0)

    def __post_init__(self) -> None:
        for name, pair in (("alice_hwp", self.alice_hwp), ("bob_hwp", self.bob_hwp)):
            if len(pair) != 2:
                raise ValueError(f"{name} must hold exactly two angles")
            for v in pair:
                _require_finite(name, v)

    def analyzer(self, station: int, setting: int) -> float:
        """Analyzer angle (twice the plate angle) for station 0=Alice, 1=Bob."""
        plate = (self.alice_hwp, self.bob_hwp)[station][setting]
        return 2.0 * plate


def correlator(state: SourceState, alpha: float, beta: float) -> float:
    """Correlator E = <ab> for analyzer angles ``alpha``, ``beta`` (radians)."""
    alpha = _require_finite("alpha", alpha)
    beta = _require_finite("beta", beta)
    interference = math.cos(2 * alpha) * math.cos(2 * beta) + math.cos(
        state.phase
    ) * math.sin(2 * alpha) * math.sin(2 * beta)
    return state.visibility * interference


def outcome_probabilities(state: SourceState, alpha: float, beta: float) -> np.ndarray:
    """Joint outcome probabilities as a 2x2 table.

    Index 0 maps to outcome +1 and index 1 to outcome -1 on each axis, so
    ``table[0, 1]`` is P(a=+1, b=-1).  Entries are nonnegative and sum to one.
    """
    e = correlator(state, alpha, beta)
    table = np.empty((2, 2))
    for ia, a in enumerate((1.0, -1.0)):
        for ib, b in enumerate((1.0, -1.0)):
            table[ia, ib] = 0.25 * (1.0 + a * b * e)
    return table


def chsh_value(state: SourceState, angles: AnalyzerAngles | None = None) -> float:
    """CHSH parameter S = E(0,0) - E(0,1) + E(1,0) + E(1,1) for plate targets."""
    if angles is None:
        angles = AnalyzerAngles()
    s = 0.0
    for x in range(2):
        for y in range(2):
            e = correlator(state, angles.analyzer(0, x), angles.analyzer(1, y))
            s += CHSH_SIGNS[x][y] * e
    return s


def chsh_hwp_gradient(
    state: SourceState, angles: AnalyzerAngles | None = None
) -> np.ndarray:
    """Correlator sensitivity to each independent wave-plate positioning.

    Every setting block repositions one Alice plate and one Bob plate, so a
    full sweep involves eight independent positionings.  Returns an array of
    shape (2, 2, 2) holding dE(x,y)/dtheta with the last axis selecting the
    station (0 = Alice plate of block (x,y), 1 = Bob plate) and the partner
    plate held fixed.  Derivatives are with respect to the plate angle, hence
    the factor four relative to the analyzer-angle derivative.
    """
    if angles is None:
        angles = AnalyzerAngles()
    v = state.visibility
    cp = math.cos(state.phase)
    out = np.empty((2, 2, 2))
    for x in range(2):
        for y in range(2):
            a = angles.analyzer(0, x)
            b = angles.analyzer(1, y)
            sa, ca = math.sin(2 * a), math.cos(2 * a)
            sb, cb = math.sin(2 * b), math.cos(2 * b)
            out[x, y, 0] = 4.0 * v * (-sa * cb + cp * ca * sb)
            out[x, y, 1] = 4.0 * v * (-ca * sb + cp * sa * cb)
    return out
