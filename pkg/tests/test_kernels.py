import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from udekit import _kernels

numba_only = pytest.mark.skipif(not _kernels.USE_NUMBA, reason="numba backend disabled")


@numba_only
def test_backends_agree_on_normals():
    a = _kernels.counter_normals(11, 64, 7, 3, first_path=5, backend="numba")
    b = _kernels.counter_normals(11, 64, 7, 3, first_path=5, backend="numpy")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


@numba_only
def test_backends_agree_on_poisson():
    lam = np.linspace(0.0, 40.0, 2001)
    a = _kernels.poisson_counts(lam, 5, backend="numba")
    b = _kernels.poisson_counts(lam, 5, backend="numpy")
    np.testing.assert_array_equal(a, b)


def test_normals_are_standard():
    z = _kernels.counter_normals(3, 2000, 50, 2).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)
    assert stats.kstest(z[:20000], "norm").pvalue > 1e-3


def test_counter_stream_is_addressable():
    full = _kernels.counter_normals(9, 10, 6, 2)
    part = _kernels.counter_normals(9, 10, 2, 2, first_path=3)
    np.testing.assert_array_equal(full[:, 3:5], part)
    assert not np.array_equal(full, _kernels.counter_normals(10, 10, 6, 2))


def test_poisson_moments_and_zero_rate():
    lam = np.full(20000, 3.5)
    k = _kernels.poisson_counts(lam, 1)
    assert abs(k.mean() - 3.5) < 4 * np.sqrt(3.5 / k.size)
    assert abs(k.var() - 3.5) < 0.15
    assert np.all(_kernels.poisson_counts(np.zeros(100), 1) == 0)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, UDEKIT_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "from udekit import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
