"""Codebook, line-of-sight channel and received-signal model for beam labeling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel


@dataclass(frozen=True)
class BeamCodebook:
    """``M`` unit-norm beamforming vectors over ``N_ant`` antennas, stored row-wise."""

    vectors: np.ndarray  # (M, N_ant) complex

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError("codebook vectors must form an (M, N_ant) array")
        if v.shape[0] < 2:
            raise ValueError(f"codebook needs M >= 2 beams, got {v.shape[0]}")
        norms = np.linalg.norm(v, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6, rtol=0):
            raise ValueError("codebook vectors must have unit L2 norm")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def M(self) -> int:
        return self.vectors.shape[0]

    @property
    def N_ant(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Channel:
    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=np.complex128).ravel())


@dataclass(frozen=True)
class RxSignal:
    y: complex
    x_sym: complex
    noise_var: float = 0.0

    def __post_init__(self):
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")


def _as_h(h) -> np.ndarray:
    if isinstance(h, Channel):
        return h.h
    return np.asarray(h, dtype=np.complex128).ravel()


def make_dft_codebook(M: int, N_ant: int) -> BeamCodebook:
    """ULA DFT codebook: entry ``n`` of beam ``m`` is ``exp(j 2 pi n m / M) / sqrt(N_ant)``."""
    if int(M) != M or int(N_ant) != N_ant or M < 1 or N_ant < 1:
        raise ValueError(f"M and N_ant must be positive integers, got M={M}, N_ant={N_ant}")
    if M < 2:
        raise ValueError(f"codebook needs M >= 2 beams, got {M}")
    m = np.arange(M)[:, None]
    n = np.arange(N_ant)[None, :]
    return BeamCodebook(np.exp(2j * np.pi * n * m / M) / np.sqrt(N_ant))


def received_signal(h, f, x_sym: complex, noise: complex = 0.0, noise_var: float = 0.0) -> RxSignal:
    """``y = h^T f x + z`` with a plain (non-conjugate) transpose."""
    h = _as_h(h)
    f = np.asarray(f, dtype=np.complex128).ravel()
    if h.shape != f.shape:
        raise ValueError(f"channel length {h.size} does not match beam length {f.size}")
    y = complex(h @ f) * complex(x_sym) + complex(noise)
    return RxSignal(y=y, x_sym=complex(x_sym), noise_var=float(noise_var))


def beam_gains(h, cb: BeamCodebook) -> np.ndarray:
    h = _as_h(h)
    if h.size != cb.N_ant:
        raise ValueError(f"channel length {h.size} does not match codebook N_ant={cb.N_ant}")
    return np.abs(cb.vectors @ h) ** 2


def optimal_beam(h, cb: BeamCodebook) -> int:
    """Exhaustive search for the beam maximizing ``|h^T f_m|^2``; lowest index wins ties."""
    h = _as_h(h)
    if h.size != cb.N_ant:
        raise ValueError(f"channel length {h.size} does not match codebook N_ant={cb.N_ant}")
    return int(_accel.best_beams(h[None, :], cb.vectors)[0])


def optimal_beams(H: np.ndarray, cb: BeamCodebook) -> np.ndarray:
    """Vectorized :func:`optimal_beam` over the rows of ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    if H.shape[1] != cb.N_ant:
        raise ValueError(f"channel length {H.shape[1]} does not match codebook N_ant={cb.N_ant}")
    return _accel.best_beams(H, cb.vectors)


def steering_channel(angle_rad: float, N_ant: int, gain: complex = 1.0) -> Channel:
    """Half-wavelength ULA line-of-sight channel ``gain * exp(j pi n sin(angle))``."""
    if N_ant < 1:
        raise ValueError("N_ant must be >= 1")
    n = np.arange(N_ant)
    return Channel(complex(gain) * np.exp(1j * np.pi * n * np.sin(angle_rad)))


def boresight_angle(k: int, M: int) -> float:
    """Arrival angle whose steering channel is matched by DFT beam ``k``.

    Beam ``k`` co-phases ``exp(j pi n s)`` when ``s = -2k/M`` modulo 2; the
    result is wrapped into ``[-1, 1)`` before taking the arcsine.
    """
    s = -2.0 * k / M
    s = (s + 1.0) % 2.0 - 1.0
    return float(np.arcsin(s))
