"""The numba kernels and their numpy twins must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmbeam import _accel
from mmbeam.signalmodel import make_dft_codebook

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed or disabled")


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(8, 8), (32, 32), (64, 16)]))
def test_best_beams_agree(seed, shape):
    M, n_ant = shape
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(50, n_ant)) + 1j * rng.normal(size=(50, n_ant))
    F = make_dft_codebook(M, n_ant).vectors
    assert np.array_equal(_accel.best_beams(H, F, use_numba=True), _accel.best_beams(H, F, use_numba=False))


@needs_numba
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0.5, 10))
def test_dba_per_rank_agree(seed, K, delta):
    rng = np.random.default_rng(seed)
    truths = rng.integers(0, 64, 40)
    ranked = rng.integers(0, 64, (40, K))
    np.testing.assert_allclose(_accel.dba_per_rank(truths, ranked, delta, use_numba=True),
                               _accel.dba_per_rank(truths, ranked, delta, use_numba=False), rtol=0, atol=1e-12)


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_voxel_index_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-25, 25, (300, 3))
    pts[:5] = [[-20, 0, -0.5], [20, 16, 3.5], [19.999, 15.999, 3.499], [0, 8, 1.5], [-20.000001, 1, 1]]
    args = ((-20.0, 0.0, -0.5), (40.0, 16.0, 4.0), (16, 16, 4))
    a = _accel.voxel_index(pts, *args, use_numba=True)
    b = _accel.voxel_index(pts, *args, use_numba=False)
    assert np.array_equal(a, b)
    assert a[0] == 0 and a[1] == -1 and a[2] == 16 * 16 * 4 - 1 and a[4] == -1


@needs_numba
def test_nn1_agree():
    rng = np.random.default_rng(0)
    x, y, q = rng.normal(size=(200, 2)), rng.integers(0, 32, 200), rng.normal(size=(80, 2))
    assert np.array_equal(_accel.nn1_predict(x, y, q, use_numba=True), _accel.nn1_predict(x, y, q, use_numba=False))


def test_numpy_path_matches_hand_values():
    truths = np.array([10, 10])
    ranked = np.array([[12, 10, 0], [40, 30, 8]])
    Y = _accel.dba_per_rank(truths, ranked, 5.0, use_numba=False)
    np.testing.assert_allclose(Y, [1 - (0.4 + 1.0) / 2, 1 - (0.0 + 1.0) / 2, 1 - (0.0 + 0.4) / 2])


def test_env_flag_selects_numpy():
    env = dict(os.environ, MMBEAM_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from mmbeam import _accel; print(_accel.backend())"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    assert out == "numpy"
