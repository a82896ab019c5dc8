"""Hot numeric kernel: the nonsignaling-constrained maximum-likelihood solve.

The solver maximizes ``sum_i n_i * log(cell_i(theta))`` over the eight
marginal/joint parameters ``theta = (a0, a1, b0, b1, c00, c01, c10, c11)``,
with the sixteen per-setting cell probabilities

    p(+,+) = c_xy     p(+,-) = a_x - c_xy
    p(-,+) = b_y - c_xy    p(-,-) = 1 - a_x - b_y + c_xy

required to stay nonnegative.  The objective is concave over that polytope,
so a damped-Newton log-barrier continuation converges to the global optimum;
the barrier with weight ``mu`` is implemented by simply adding ``mu`` to
every count.

Two interchangeable implementations exist: a numba ``@njit`` kernel used by
default and a vectorized pure-numpy fallback.  Set the environment variable
``BELLSIM_DISABLE_NUMBA=1`` before import to select the numpy path (or run
``benchmarks/bench_mle.py`` to compare both).  Counts enter flattened in C
order of the (x, y, a, b) table: index 4*(2x+y) + (2i_a + i_b) with index 0
meaning outcome +1.
"""

from __future__ import annotations

import os

import numpy as np

DISABLE_ENV = "BELLSIM_DISABLE_NUMBA"

STATUS_OK = 0
STATUS_MAX_ITER = 1

_MU_MIN = 1e-9
_BOUNDARY_FRACTION = 0.995
_ARMIJO = 1e-4


def _cell_matrix() -> tuple[np.ndarray, np.ndarray]:
    """Affine map from theta to the 16 cell probabilities: cells = A @ theta + b."""
    a = np.zeros((16, 8))
    b = np.zeros(16)
    row = 0
    for x in range(2):
        for y in range(2):
            ia, ib, ic = x, 2 + y, 4 + 2 * x + y
            a[row, ic] = 1.0
            row += 1
            a[row, ia] = 1.0
            a[row, ic] = -1.0
            row += 1
            a[row, ib] = 1.0
            a[row, ic] = -1.0
            row += 1
            a[row, ia] = -1.0
            a[row, ib] = -1.0
            a[row, ic] = 1.0
            b[row] = 1.0
            row += 1
    return a, b


A_CELLS, B_CELLS = _cell_matrix()
_PINV_CELLS = np.linalg.pinv(A_CELLS)
THETA_UNIFORM = np.array([0.5, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25])


def initial_point(counts16: np.ndarray) -> np.ndarray:
    """Interior starting point: least-squares nonsignaling projection of the
    empirical frequencies blended with the uniform point (weight 1/4, raised
    until all cells clear 1e-4)."""
    freqs = np.empty(16)
    for s in range(4):
        block = counts16[4 * s : 4 * s + 4]
        freqs[4 * s : 4 * s + 4] = block / block.sum()
    theta_ls = _PINV_CELLS @ (freqs - B_CELLS)
    w = 0.25
    while w < 1.0:
        theta = (1.0 - w) * theta_ls + w * THETA_UNIFORM
        if (A_CELLS @ theta + B_CELLS).min() >= 1e-4:
            return theta
        w = min(1.0, w * 1.5)
    return THETA_UNIFORM.copy()


# ---------------------------------------------------------------------------
# pure-numpy implementation
# ---------------------------------------------------------------------------


def _objective_numpy(weights: np.ndarray, cells: np.ndarray) -> float:
    mask = weights > 0.0
    return float(np.sum(weights[mask] * np.log(cells[mask])))


def _grad_hess_numpy(weights: np.ndarray, cells: np.ndarray):
    g = np.zeros(8)
    h = np.zeros((8, 8))
    for s in range(4):
        x, y = s >> 1, s & 1
        k = 4 * s
        ia, ib, ic = x, 2 + y, 4 + s
        p = cells[k : k + 4]
        n = weights[k : k + 4]
        r = np.where(n > 0.0, n / p, 0.0)
        q = np.where(n > 0.0, n / (p * p), 0.0)
        g[ia] += r[1] - r[3]
        g[ib] += r[2] - r[3]
        g[ic] += r[0] - r[1] - r[2] + r[3]
        h[ia, ia] -= q[1] + q[3]
        h[ib, ib] -= q[2] + q[3]
        h[ic, ic] -= q[0] + q[1] + q[2] + q[3]
        h[ia, ib] -= q[3]
        h[ib, ia] -= q[3]
        h[ia, ic] += q[1] + q[3]
        h[ic, ia] += q[1] + q[3]
        h[ib, ic] += q[2] + q[3]
        h[ic, ib] += q[2] + q[3]
    return g, h


def _newton_stage_numpy(counts16, mu, theta, cells, tol_decr, max_steps):
    weights = counts16 + mu
    f = _objective_numpy(weights, cells)
    for _ in range(max_steps):
        g, h = _grad_hess_numpy(weights, cells)
        m = -h
        ridge = 1e-12 * max(1.0, np.trace(m) / 8.0)
        m[np.diag_indices(8)] += ridge
        try:
            step = np.linalg.solve(m, g)
        except np.linalg.LinAlgError:
            step = g / max(1.0, np.abs(np.diag(m)).max())
        decr = float(g @ step)
        if decr < tol_decr:
            return theta, cells, True
        dcells = A_CELLS @ step
        t = 1.0
        shrinking = dcells < 0.0
        if shrinking.any():
            t = min(
                t,
                float(
                    np.min(_BOUNDARY_FRACTION * cells[shrinking] / -dcells[shrinking])
                ),
            )
        accepted = False
        for _ in range(80):
            cells_new = cells + t * dcells
            if cells_new.min() > 0.0:
                f_new = _objective_numpy(weights, cells_new)
                if f_new >= f + _ARMIJO * t * decr:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return theta, cells, True
        theta = theta + t * step
        cells = cells_new
        gain = f_new - f
        f = f_new
        if gain < 1e-14 * (1.0 + abs(f)):
            return theta, cells, True
    return theta, cells, False


def solve_ns_mle_numpy(counts16: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Solve the constrained MLE; returns (theta, log-likelihood sum, status)."""
    counts16 = np.ascontiguousarray(counts16, dtype=np.float64).reshape(16)
    theta = initial_point(counts16)
    cells = A_CELLS @ theta + B_CELLS
    mu = max(1.0, counts16.mean()) * 0.1
    exhausted = False
    while mu > _MU_MIN:
        theta, cells, ok = _newton_stage_numpy(counts16, mu, theta, cells, 0.1 * mu, 50)
        exhausted |= not ok
        mu *= 0.1
    theta, cells, ok = _newton_stage_numpy(counts16, 0.0, theta, cells, 1e-16, 80)
    exhausted |= not ok
    f = _objective_numpy(counts16, cells)
    return theta, f, (STATUS_MAX_ITER if exhausted else STATUS_OK)


# ---------------------------------------------------------------------------
# numba implementation (same algorithm, scalar loops)
# ---------------------------------------------------------------------------

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

if HAVE_NUMBA:
    _njit = numba.njit(cache=True)

    @_njit
    def _cells_nb(theta, cells):
        for s in range(4):
            x = s >> 1
            y = s & 1
            a = theta[x]
            b = theta[2 + y]
            c = theta[4 + s]
            cells[4 * s] = c
            cells[4 * s + 1] = a - c
            cells[4 * s + 2] = b - c
            cells[4 * s + 3] = 1.0 - a - b + c

    @_njit
    def _objective_nb(weights, cells):
        f = 0.0
        for i in range(16):
            if weights[i] > 0.0:
                f += weights[i] * np.log(cells[i])
        return f

    @_njit
    def _newton_stage_nb(counts16, mu, theta, cells, tol_decr, max_steps):
        weights = counts16 + mu
        f = _objective_nb(weights, cells)
        g = np.empty(8)
        h = np.empty((8, 8))
        r = np.empty(4)
        q = np.empty(4)
        dcells = np.empty(16)
        cells_new = np.empty(16)
        for _ in range(max_steps):
            for i in range(8):
                g[i] = 0.0
                for j in range(8):
                    h[i, j] = 0.0
            for s in range(4):
                x = s >> 1
                y = s & 1
                k = 4 * s
                ia = x
                ib = 2 + y
                ic = 4 + s
                for i in range(4):
                    if weights[k + i] > 0.0:
                        r[i] = weights[k + i] / cells[k + i]
                        q[i] = r[i] / cells[k + i]
                    else:
                        r[i] = 0.0
                        q[i] = 0.0
                g[ia] += r[1] - r[3]
                g[ib] += r[2] - r[3]
                g[ic] += r[0] - r[1] - r[2] + r[3]
                h[ia, ia] -= q[1] + q[3]
                h[ib, ib] -= q[2] + q[3]
                h[ic, ic] -= q[0] + q[1] + q[2] + q[3]
                h[ia, ib] -= q[3]
                h[ib, ia] -= q[3]
                h[ia, ic] += q[1] + q[3]
                h[ic, ia] += q[1] + q[3]
                h[ib, ic] += q[2] + q[3]
                h[ic, ib] += q[2] + q[3]
            m = -h
            trace = 0.0
            for i in range(8):
                trace += m[i, i]
            ridge = 1e-12 * max(1.0, trace / 8.0)
            for i in range(8):
                m[i, i] += ridge
            step = np.linalg.solve(m, g)
            decr = 0.0
            for i in range(8):
                decr += g[i] * step[i]
            if decr < tol_decr:
                return f, True
            for s in range(4):
                x = s >> 1
                y = s & 1
                da = step[x]
                db = step[2 + y]
                dc = step[4 + s]
                dcells[4 * s] = dc
                dcells[4 * s + 1] = da - dc
                dcells[4 * s + 2] = db - dc
                dcells[4 * s + 3] = -da - db + dc
            t = 1.0
            for i in range(16):
                if dcells[i] < 0.0:
                    tb = _BOUNDARY_FRACTION * cells[i] / -dcells[i]
                    if tb < t:
                        t = tb
            accepted = False
            f_new = f
            for _ in range(80):
                ok = True
                for i in range(16):
                    cells_new[i] = cells[i] + t * dcells[i]
                    if cells_new[i] <= 0.0:
                        ok = False
                if ok:
                    f_new = _objective_nb(weights, cells_new)
                    if f_new >= f + _ARMIJO * t * decr:
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                return f, True
            for i in range(8):
                theta[i] += t * step[i]
            for i in range(16):
                cells[i] = cells_new[i]
            gain = f_new - f
            f = f_new
            if gain < 1e-14 * (1.0 + abs(f)):
                return f, True
        return f, False

    @_njit
    def _solve_nb(counts16, theta):
        cells = np.empty(16)
        _cells_nb(theta, cells)
        mu = counts16.mean() * 0.1
        if mu < 0.1:
            mu = 0.1
        exhausted = False
        while mu > _MU_MIN:
            f, ok = _newton_stage_nb(counts16, mu, theta, cells, 0.1 * mu, 50)
            if not ok:
                exhausted = True
            mu *= 0.1
        f, ok = _newton_stage_nb(counts16, 0.0, theta, cells, 1e-16, 80)
        if not ok:
            exhausted = True
        f = _objective_nb(counts16, cells)
        return f, exhausted

    def solve_ns_mle_numba(counts16: np.ndarray) -> tuple[np.ndarray, float, int]:
        """Solve the constrained MLE; returns (theta, log-likelihood sum, status)."""
        counts16 = np.ascontiguousarray(counts16, dtype=np.float64).reshape(16)
        theta = initial_point(counts16)
        f, exhausted = _solve_nb(counts16, theta)
        return theta, f, (STATUS_MAX_ITER if exhausted else STATUS_OK)

else:  # pragma: no cover
    solve_ns_mle_numba = None


def _env_disabled() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() in {"1", "true", "yes", "on"}


USING_NUMBA = HAVE_NUMBA and not _env_disabled()

solve_ns_mle = solve_ns_mle_numba if USING_NUMBA else solve_ns_mle_numpy
