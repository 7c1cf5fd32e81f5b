import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmbeam.signalmodel import (
    BeamCodebook, Channel, boresight_angle, make_dft_codebook, optimal_beam, optimal_beams,
    received_signal, steering_channel,
)


def brute_force_beam(h, F):
    best, arg = -1.0, 0
    for m in range(F.shape[0]):
        acc = 0j
        for n in range(F.shape[1]):
            acc += h[n] * F[m, n]
        g = abs(acc) ** 2
        if g > best:
            best, arg = g, m
    return arg


def test_single_antenna_codebook_collapses():
    cb = make_dft_codebook(2, 1)
    np.testing.assert_allclose(cb.vectors, [[1.0], [1.0]])


def test_zero_phase_beam():
    cb = make_dft_codebook(4, 4)
    np.testing.assert_allclose(cb.vectors[0], [0.5, 0.5, 0.5, 0.5])


def test_square_dft_codebook_is_orthogonal():
    F = make_dft_codebook(8, 8).vectors
    G = np.abs(F.conj() @ F.T)
    np.testing.assert_allclose(G - np.diag(np.diag(G)), 0, atol=1e-12)


def test_codebook_entries_and_norms():
    cb = make_dft_codebook(6, 5)
    assert (cb.M, cb.N_ant) == (6, 5)
    assert cb.vectors[3, 2] == pytest.approx(cmath.exp(2j * math.pi * 2 * 3 / 6) / math.sqrt(5))
    np.testing.assert_allclose(np.linalg.norm(cb.vectors, axis=1), 1, atol=1e-12)


@pytest.mark.parametrize("M,N", [(0, 4), (4, 0), (-1, 2), (1, 4)])
def test_codebook_rejects_bad_sizes(M, N):
    with pytest.raises(ValueError):
        make_dft_codebook(M, N)


def test_codebook_rejects_non_unit_vectors():
    with pytest.raises(ValueError):
        BeamCodebook(np.ones((2, 2)))


def test_received_signal_cases():
    assert received_signal([1], [1], 2, 0).y == 2
    assert received_signal([0, 0], [0.3, 1j], 5 - 1j, 0).y == 0
    y = received_signal([1, 1j], [1 / math.sqrt(2)] * 2, 1, 0).y
    assert y == pytest.approx((1 + 1j) / math.sqrt(2), abs=1e-15)


def test_received_signal_uses_plain_transpose():
    # conj transpose would give 1 - j; plain transpose gives 1 + j.
    assert received_signal([1, 1j], [1, 1], 1).y == pytest.approx(1 + 1j)


def test_received_signal_noise_and_dimension_check():
    assert received_signal(Channel([2]), [1], 1, 0.5j, noise_var=0.25).y == 2 + 0.5j
    with pytest.raises(ValueError):
        received_signal([1, 2], [1], 1)
    with pytest.raises(ValueError):
        received_signal([1], [1], 1, noise_var=-1)


def test_received_signal_linear_in_symbol():
    rng = np.random.default_rng(3)
    h = rng.normal(size=6) + 1j * rng.normal(size=6)
    f = make_dft_codebook(8, 6).vectors[5]
    a, b = 0.3 - 2j, -1.1 + 0.4j
    ya = received_signal(h, f, a).y
    yb = received_signal(h, f, b).y
    assert received_signal(h, f, 2 * a + b).y == pytest.approx(2 * ya + yb, abs=1e-12)


def test_optimal_beam_conjugate_channel():
    cb = make_dft_codebook(4, 4)
    assert optimal_beam(np.conj(cb.vectors[2]), cb) == 2


def test_optimal_beam_zero_channel_ties_to_zero():
    assert optimal_beam(np.zeros(4), make_dft_codebook(4, 4)) == 0


def test_optimal_beam_matches_brute_force_on_random_channels():
    cb = make_dft_codebook(64, 16)
    rng = np.random.default_rng(0)
    H = rng.normal(size=(1000, 16)) + 1j * rng.normal(size=(1000, 16))
    expected = [brute_force_beam(h, cb.vectors) for h in H]
    assert optimal_beams(H, cb).tolist() == expected
    assert [optimal_beam(h, cb) for h in H[:50]] == expected[:50]


def test_optimal_beam_dimension_mismatch():
    with pytest.raises(ValueError):
        optimal_beam(np.ones(3), make_dft_codebook(4, 4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-math.pi, math.pi))
def test_optimal_beam_scale_invariant(seed, mag, phase):
    rng = np.random.default_rng(seed)
    cb = make_dft_codebook(16, 8)
    h = rng.normal(size=8) + 1j * rng.normal(size=8)
    assert optimal_beam(h * mag * cmath.exp(1j * phase), cb) == optimal_beam(h, cb)


@pytest.mark.parametrize("k", range(16))
def test_conjugate_beam_is_optimal(k):
    cb = make_dft_codebook(16, 16)
    assert optimal_beam(np.conj(cb.vectors[k]) * (0.5 - 2j), cb) == k


def test_steering_channel_cases():
    np.testing.assert_allclose(steering_channel(0.0, 4, 1).h, [1, 1, 1, 1])
    np.testing.assert_allclose(steering_channel(math.pi / 2, 2, 1).h, [1, -1], atol=1e-15)
    np.testing.assert_array_equal(steering_channel(0.7, 5, 0).h, np.zeros(5))


@pytest.mark.parametrize("k", range(16))
def test_boresight_steering_selects_matching_beam(k):
    cb = make_dft_codebook(16, 16)
    h = steering_channel(boresight_angle(k, 16), 16)
    assert optimal_beam(h, cb) == k
