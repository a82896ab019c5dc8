import os
import subprocess
import sys

import numpy as np
import pytest

from bellsim import kernels


def test_numba_is_active_by_default():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    assert kernels.USING_NUMBA or os.environ.get(kernels.DISABLE_ENV)


def test_numba_and_numpy_paths_agree(mle_corpus):
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    for table in mle_corpus[:25]:
        counts16 = table.counts.astype(float).reshape(16)
        theta_nb, f_nb, st_nb = kernels.solve_ns_mle_numba(counts16)
        theta_np, f_np, st_np = kernels.solve_ns_mle_numpy(counts16)
        assert st_nb == kernels.STATUS_OK
        assert st_np == kernels.STATUS_OK
        assert f_nb == pytest.approx(f_np, abs=1e-8, rel=1e-12)
        assert np.allclose(theta_nb, theta_np, atol=1e-6)


def test_initial_point_is_interior(mle_corpus):
    for table in mle_corpus:
        counts16 = table.counts.astype(float).reshape(16)
        theta0 = kernels.initial_point(counts16)
        cells = kernels.A_CELLS @ theta0 + kernels.B_CELLS
        assert cells.min() >= 1e-4 - 1e-12


def test_env_flag_selects_numpy_path():
    code = (
        "import os; os.environ['BELLSIM_DISABLE_NUMBA'] = '1'\n"
        "import numpy as np\n"
        "from bellsim import kernels\n"
        "assert not kernels.USING_NUMBA\n"
        "assert kernels.solve_ns_mle is kernels.solve_ns_mle_numpy\n"
        "theta, f, status = kernels.solve_ns_mle(np.full(16, 25.0))\n"
        "assert status == kernels.STATUS_OK\n"
        "assert abs(theta[0] - 0.5) < 1e-9\n"
        "print('numpy path ok')\n"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, check=True
    )
    assert "numpy path ok" in out.stdout
