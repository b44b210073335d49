"""Time-white Gaussian noise with Riesz spatial covariance on a periodic grid.

The spectral weight of mode ``xi_k`` is ``s_k = |xi_k|^-gamma / L^d``, so the
discrete covariance ``C(r) = sum_k s_k exp(i xi_k r)`` is a Riemann sum for
``(2 pi)^-d int |xi|^-gamma exp(i xi r) d xi = (2 pi)^-d c11 |r|^-(d-gamma)``.

The mean mode has an integrable singularity.  By default it receives the
integral of ``(2 pi)^-d |xi|^-gamma`` over its lattice cell (``zero_mode="cell"``),
which keeps one-point variances consistent with the continuum; ``"drop"``
sets it to zero, which is harmless for increments but biases levels.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, ParameterDomainError
from .grid import Grid
from .model import ModelParams
from .rng import NOISE, Stream

ZERO_MODES = ("cell", "drop")


def zero_mode_mass(grid: Grid, gamma: float) -> float:
    """``(2 pi)^-d int |xi|^-gamma`` over the cell ``[-pi/L, pi/L]^d``."""
    a = math.pi / grid.extent
    d = grid.dim
    if d == 1:
        cell = 2 * a ** (1 - gamma) / (1 - gamma)
    else:
        # polar coordinates over the eight triangles of the square
        ang, _ = integrate.quad(lambda th: math.cos(th) ** (gamma - 2), 0.0, math.pi / 4, epsabs=1e-14, epsrel=1e-13)
        cell = 8 * a ** (2 - gamma) / (2 - gamma) * ang
    return (2 * math.pi) ** (-d) * cell


@lru_cache(maxsize=32)
def _weights(grid: Grid, gamma: float, zero_mode: str) -> np.ndarray:
    k = grid.wavenumbers
    with np.errstate(divide="ignore"):
        s = np.where(k > 0, k ** (-gamma), 0.0) / grid.extent**grid.dim
    if zero_mode == "cell":
        s.flat[0] = zero_mode_mass(grid, gamma)
    s.setflags(write=False)
    return s


def spectral_weights(grid: Grid, gamma: float, zero_mode: str = "cell") -> np.ndarray:
    """Per-mode variance ``s_k`` on the half-spectrum lattice (read-only)."""
    if zero_mode not in ZERO_MODES:
        raise ConfigurationError(f"zero_mode must be one of {ZERO_MODES}, got {zero_mode!r}")
    if not 0.0 < gamma < grid.dim:
        raise ParameterDomainError(f"need 0 < gamma < d = {grid.dim}, got {gamma}")
    return _weights(grid, float(gamma), zero_mode)


@lru_cache(maxsize=32)
def _amplitude(grid: Grid, gamma: float, zero_mode: str) -> np.ndarray:
    amp = np.sqrt(grid.size * spectral_weights(grid, gamma, zero_mode))
    amp.setflags(write=False)
    return amp


def color(grid: Grid, gamma: float, white: np.ndarray, zero_mode: str = "cell") -> np.ndarray:
    """Map unit white noise on the grid (any leading batch axes) to Riesz-colored noise."""
    return grid.inverse(_amplitude(grid, float(gamma), zero_mode) * grid.forward(white))


@dataclass(frozen=True)
class NoiseIncrement:
    dt: float
    values: np.ndarray
    seed_path: tuple  # (seed, member, step)


def sample_noise(grid: Grid, params: ModelParams, dt: float, stream: Stream, step: int = 0,
                 zero_mode: str = "cell") -> NoiseIncrement:
    """Noise integrated over one time slab of width ``dt``.

    ``values / sqrt(dt)`` has covariance :func:`discrete_covariance`.
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if params.dim != grid.dim:
        raise ConfigurationError(f"model dim {params.dim} does not match grid dim {grid.dim}")
    white = stream.normal(grid.shape, step, NOISE)
    values = math.sqrt(dt) * color(grid, params.gamma, white, zero_mode)
    return NoiseIncrement(float(dt), values, (stream.seed, stream.member, int(step)))


def sample_noise_batch(grid: Grid, params: ModelParams, dt: float, streams, step: int,
                       zero_mode: str = "cell") -> np.ndarray:
    """Increments for several members at one step, stacked along axis 0.

    Row ``m`` is bitwise equal to ``sample_noise(..., streams[m], step).values``.
    """
    white = np.stack([s.normal(grid.shape, step, NOISE) for s in streams])
    return math.sqrt(dt) * color(grid, params.gamma, white, zero_mode)


def discrete_covariance(grid: Grid, params: ModelParams, zero_mode: str = "cell") -> np.ndarray:
    """Exact covariance of unit-time noise, indexed by lag in FFT order."""
    s = spectral_weights(grid, params.gamma, zero_mode)
    return grid.inverse(s) * grid.size


def continuum_covariance(params: ModelParams, r) -> np.ndarray:
    """``(2 pi)^-d c11 |r|^-(d-gamma)``, the limit of :func:`discrete_covariance`."""
    from .constants import riesz_c11

    r = np.asarray(r, dtype=float)
    d = params.dim
    return (2 * math.pi) ** (-d) * riesz_c11(d, params.gamma) * r ** (-(d - params.gamma))


def sample_noise_ensemble(grid: Grid, params: ModelParams, dt: float, seed: int, members: int, step: int = 0,
                          threads: int = 1, chunk: int = 250, zero_mode: str = "cell") -> np.ndarray:
    """Increments of members ``0..members-1`` at one step; identical for any thread count."""
    ids = range(members)
    chunks = [[Stream(seed, m) for m in ids[i:i + chunk]] for i in range(0, members, chunk)]
    work = lambda c: sample_noise_batch(grid, params, dt, c, step, zero_mode)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.concatenate(parts, axis=0)
