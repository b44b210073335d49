"""Isotropic multiparameter (Levy) fractional Brownian motion.

Two exact samplers are provided: a pivoted Cholesky factorization of the
covariance matrix for arbitrary point sets, and circulant embedding of
fractional Gaussian noise for equally spaced 1-D lattices starting at 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigurationError, EmbeddingError, FactorizationError, ParameterDomainError
from .rng import FBM, Stream

MAX_CHOLESKY_POINTS = 4096
INDEFINITE_TOL = 1e-10
METHODS = ("cholesky", "circulant1d")


def _check_hurst(H: float) -> None:
    if not 0.0 < H < 1.0:
        raise ParameterDomainError(f"need 0 < H < 1, got H={H}")


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ConfigurationError("points must be a 1-D array of scalars or a 2-D array of sites")
    return pts


def fbm_covariance(x, y, H: float):
    """``(|x|^2H + |y|^2H - |x - y|^2H) / 2``, broadcasting over leading axes of sites."""
    _check_hurst(H)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0:
        x, y = x[..., None], y[..., None]
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    nd = np.linalg.norm(x - y, axis=-1)
    out = 0.5 * (nx ** (2 * H) + ny ** (2 * H) - nd ** (2 * H))
    return float(out) if out.ndim == 0 else out


def covariance_matrix(points, H: float) -> np.ndarray:
    pts = _as_points(points)
    return fbm_covariance(pts[:, None, :], pts[None, :, :], H)


@dataclass(frozen=True)
class FbmField:
    hurst: float
    points: np.ndarray
    values: np.ndarray  # (n_points,) or (samples, n_points)
    method: str


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor ``F`` with ``F F^T = cov`` for a positive semidefinite matrix.

    Uses LAPACK's pivoted Cholesky so rank deficiency (e.g. a site at the
    origin) is handled; raises ``FactorizationError`` when the matrix is
    indefinite beyond ``INDEFINITE_TOL`` relative to its largest eigenvalue.
    """
    cov = np.asarray(cov, dtype=float)
    eig = np.linalg.eigvalsh(cov)
    top = max(eig[-1], 0.0)
    if eig[0] < -INDEFINITE_TOL * top:
        raise FactorizationError(
            f"covariance matrix is indefinite: min eigenvalue {eig[0]:.3e} vs max {top:.3e}"
        )
    n = cov.shape[0]
    if top == 0.0:
        return np.zeros_like(cov)
    c, piv, rank, info = lapack.dpstrf(cov, lower=1, tol=INDEFINITE_TOL * top / n)
    if info < 0:
        raise FactorizationError(f"dpstrf rejected argument {-info}")
    factor = np.tril(c)[:, :rank]
    out = np.zeros((n, rank))
    out[piv - 1] = factor
    return out


def circulant_eigenvalues(n: int, H: float, size: int | None = None) -> np.ndarray:
    """Eigenvalues of the circulant embedding of unit-step fGn of length ``n``."""
    m = n if size is None else size
    if m < n:
        raise ConfigurationError(f"embedding half-size {m} is smaller than the sequence length {n}")
    k = np.arange(m + 1, dtype=float)
    acf = 0.5 * (np.abs(k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    row = np.concatenate([acf, acf[-2:0:-1]])
    return np.fft.fft(row).real


def _lattice_spacing(pts: np.ndarray) -> float:
    if pts.shape[1] != 1:
        raise ConfigurationError("circulant sampling needs a 1-D point set")
    x = pts[:, 0]
    if x.size < 2 or x[0] != 0.0:
        raise ConfigurationError("circulant sampling needs an equally spaced lattice starting at 0")
    step = x[1] - x[0]
    if step <= 0 or not np.allclose(np.diff(x), step, rtol=1e-12, atol=0.0):
        raise ConfigurationError("circulant sampling needs an equally spaced increasing lattice")
    return float(step)


def sample_fgn(n: int, H: float, generator: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Unit-step fractional Gaussian noise of length ``n`` by circulant embedding."""
    _check_hurst(H)
    lam = circulant_eigenvalues(n, H)
    if lam.min() < -INDEFINITE_TOL * lam.max():
        raise EmbeddingError(
            f"circulant embedding has negative eigenvalue {lam.min():.3e}",
            suggested_padding=2 ** math.ceil(math.log2(2 * n)),
        )
    lam = np.clip(lam, 0.0, None)
    M = lam.size
    shape = (M,) if size is None else (size, M)
    z = generator.standard_normal(shape) + 1j * generator.standard_normal(shape)
    x = np.fft.fft(np.sqrt(lam / M) * z, axis=-1)
    return x.real[..., :n]


def sample_fbm(points, H: float, stream: Stream, method: str | None = None, size: int | None = None,
               step: int = 0) -> FbmField:
    """Exact Levy fBm at ``points``; ``size`` draws several independent paths at once.

    ``method`` defaults to ``circulant1d`` for equally spaced 1-D lattices
    from 0 and ``cholesky`` otherwise.
    """
    _check_hurst(H)
    pts = _as_points(points)
    if method is None:
        try:
            _lattice_spacing(pts)
            method = "circulant1d"
        except ConfigurationError:
            method = "cholesky"
    if method not in METHODS:
        raise ConfigurationError(f"unknown fbm method {method!r}; expected one of {METHODS}")
    gen = stream.generator(step, FBM)
    if method == "circulant1d":
        delta = _lattice_spacing(pts)
        n = pts.shape[0] - 1
        incr = sample_fgn(n, H, gen, size) * delta**H
        zero = np.zeros(incr.shape[:-1] + (1,))
        values = np.concatenate([zero, np.cumsum(incr, axis=-1)], axis=-1)
    else:
        if pts.shape[0] > MAX_CHOLESKY_POINTS:
            raise ConfigurationError(f"at most {MAX_CHOLESKY_POINTS} points for exact factorization")
        factor = cholesky_factor(covariance_matrix(pts, H))
        z = gen.standard_normal((factor.shape[1],) if size is None else (size, factor.shape[1]))
        values = z @ factor.T
    return FbmField(float(H), pts, values, method)


def fbm_variation_oracle(H: float, n: int, stream: Stream, q: float | None = None, size: int | None = None,
                         scale: float = 1.0, length: float = 1.0):
    """``sum |B(x_{i+1}) - B(x_i)|^q`` over an ``n``-step partition of ``[0, length]``.

    With ``q = 1/H`` (default) and ``scale = length = 1`` the ensemble mean is
    ``E|N|^(1/H)``; in general it is ``scale^q E|N|^q n^(1 - qH) length^(qH)``.
    """
    _check_hurst(H)
    if n < 2:
        raise ConfigurationError(f"need n >= 2, got {n}")
    q = 1.0 / H if q is None else q
    gen = stream.generator(0, FBM)
    incr = scale * sample_fgn(n, H, gen, size) * (length / n) ** H
    v = np.sum(np.abs(incr) ** q, axis=-1)
    return float(v) if np.ndim(v) == 0 else v
