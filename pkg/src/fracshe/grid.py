"""Periodic grids, real spectral transforms, and the fractional heat kernel.

The torus ``[-L/2, L/2)^d`` with ``n`` points per axis stands in for R^d.
Transforms act on the trailing ``d`` axes so a leading batch axis (ensemble
members) is allowed everywhere.  Frequencies are angular, ``xi = 2 pi k / L``;
the half-spectrum layout of ``numpy.fft.rfftn`` keeps the Nyquist row real.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, ParameterDomainError, ResolutionError

MAX_POINTS = 2**24
NEGATIVITY_TOL = 1e-8


@dataclass(frozen=True)
class Grid:
    dim: int
    extent: float
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}")
        if not (math.isfinite(self.extent) and self.extent > 0):
            raise ConfigurationError(f"extent must be positive, got {self.extent}")
        if int(self.n) != self.n or self.n % 2:
            raise ConfigurationError(f"points_per_axis must be an even integer, got {self.n}")
        if self.n < 8:
            raise ConfigurationError(f"points_per_axis must be at least 8, got {self.n}")
        if self.n**self.dim > MAX_POINTS:
            raise ConfigurationError(f"{self.n}^{self.dim} grid points exceed the memory cap {MAX_POINTS}")
        object.__setattr__(self, "extent", float(self.extent))
        object.__setattr__(self, "n", int(self.n))

    @property
    def spacing(self) -> float:
        return self.extent / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def nyquist(self) -> float:
        return math.pi * self.n / self.extent

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates along one axis, ``-L/2 + j h``."""
        return -self.extent / 2 + self.spacing * np.arange(self.n)

    def points(self) -> np.ndarray:
        """All grid sites, shape ``(*shape, dim)``."""
        mesh = np.meshgrid(*([self.coords] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """``|xi|`` on the half-spectrum lattice used by ``rfftn``."""
        k_last = 2 * np.pi * np.fft.rfftfreq(self.n, d=self.spacing)
        if self.dim == 1:
            return np.abs(k_last)
        k_full = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        kx, ky = np.meshgrid(k_full, k_last, indexing="ij")
        return np.hypot(kx, ky)

    @cached_property
    def axis_frequencies(self) -> tuple[np.ndarray, ...]:
        """Per-axis angular frequencies broadcastable to the half-spectrum lattice."""
        k_last = 2 * np.pi * np.fft.rfftfreq(self.n, d=self.spacing)
        if self.dim == 1:
            return (k_last,)
        k_full = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        return (k_full[:, None], k_last[None, :])

    def forward(self, values: np.ndarray, workers: int | None = None) -> np.ndarray:
        return sfft.rfftn(values, axes=self.axes, workers=workers)

    def inverse(self, coeffs: np.ndarray, workers: int | None = None) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.shape, axes=self.axes, workers=workers)

    def lag_distances(self) -> np.ndarray:
        """Periodic distance ``|r|`` of each lag in FFT order (lag 0 at index 0)."""
        j = np.arange(self.n)
        r1 = self.spacing * np.minimum(j, self.n - j)
        if self.dim == 1:
            return r1
        return np.hypot(r1[:, None], r1[None, :])

    def to_lag_order(self, centered: np.ndarray) -> np.ndarray:
        """Reorder a field indexed by grid coordinates to FFT lag order."""
        return np.fft.ifftshift(centered, axes=self.axes)

    def to_centered(self, lagged: np.ndarray) -> np.ndarray:
        return np.fft.fftshift(lagged, axes=self.axes)

    def shift_index(self, displacement) -> tuple[int, ...]:
        """Lattice shift for a displacement vector; raises if it is off-lattice."""
        disp = np.atleast_1d(np.asarray(displacement, dtype=float))
        if disp.shape != (self.dim,):
            raise ConfigurationError(f"displacement must have {self.dim} components")
        steps = disp / self.spacing
        rounded = np.round(steps)
        if np.any(np.abs(steps - rounded) > 1e-9 * np.maximum(1.0, np.abs(steps))):
            raise ConfigurationError(f"displacement {disp.tolist()} is not a multiple of the spacing {self.spacing}")
        return tuple(int(s) for s in rounded)

    def site_index(self, x) -> tuple[int, ...]:
        """Grid index of a site given by coordinates (wrapped onto the torus)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        shift = self.shift_index(x + self.extent / 2)
        return tuple(s % self.n for s in shift)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extent": self.extent, "n": self.n}


def make_grid(dim: int, extent: float, points_per_axis: int) -> Grid:
    return Grid(dim, extent, points_per_axis)


@dataclass(frozen=True)
class KernelSlice:
    t: float
    alpha: float
    values: np.ndarray  # G_t at the grid sites, centered layout
    symbol: np.ndarray  # exp(-t |xi|^alpha) on the half-spectrum lattice
    grid: Grid

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.spacing**self.grid.dim)


def heat_symbol(grid: Grid, alpha: float, t: float) -> np.ndarray:
    return np.exp(-t * grid.wavenumbers**alpha)


def green_kernel(grid: Grid, alpha: float, t: float) -> KernelSlice:
    """The fractional heat kernel ``G_t`` sampled on the grid.

    Raises ``ResolutionError`` unless the symbol has dropped below 1/2 at the
    axis Nyquist frequency, i.e. the kernel is wider than a few cells.
    """
    if not 0.0 < alpha <= 2.0:
        raise ParameterDomainError(f"need 0 < alpha <= 2, got {alpha}")
    if not t > 0:
        raise ParameterDomainError(f"need t > 0, got {t}")
    if math.exp(-t * grid.nyquist**alpha) >= 0.5:
        raise ResolutionError(
            f"kernel at t={t} is not resolved: exp(-t * nyquist^alpha) >= 0.5; increase n or t"
        )
    symbol = heat_symbol(grid, alpha, t)
    lagged = grid.inverse(symbol) / grid.spacing**grid.dim
    values = grid.to_centered(lagged)
    peak = values.max()
    if values.min() < -NEGATIVITY_TOL * peak:
        raise ResolutionError(f"kernel has negative lobes down to {values.min():.3g}; refine the grid")
    return KernelSlice(float(t), float(alpha), values, symbol, grid)


def apply_semigroup(grid: Grid, values: np.ndarray, alpha: float, t: float) -> np.ndarray:
    """Convolve with ``G_t`` (exactly, in the transform domain)."""
    return grid.inverse(heat_symbol(grid, alpha, t) * grid.forward(values))


@dataclass(frozen=True)
class KernelBounds:
    lower: float
    upper: float
    max_violation: float
    n_checked: int

    @property
    def ratio(self) -> float:
        return self.upper / self.lower


def kernel_bounds_check(slice_: KernelSlice, alpha: float | None = None, lower: float | None = None,
                        upper: float | None = None, radius: float | None = None) -> KernelBounds:
    """Two-sided comparison of ``G_t`` with ``t / (t^(1/alpha) + |x|)^(d+alpha)``.

    Constants are fitted as the extreme ratios over sites with ``|x| <= radius``
    (default ``L/4``, away from the periodic images) unless given.  The
    reported violation is the largest relative excess over the supplied or
    fitted bounds.
    """
    alpha = slice_.alpha if alpha is None else alpha
    if not 1.0 < alpha < 2.0:
        raise ParameterDomainError("polynomial kernel bounds hold only for 1 < alpha < 2")
    grid = slice_.grid
    radius = grid.extent / 4 if radius is None else radius
    dist = np.linalg.norm(grid.points(), axis=-1)
    mask = dist <= radius
    t = slice_.t
    profile = t / (t ** (1 / alpha) + dist[mask]) ** (grid.dim + alpha)
    ratio = slice_.values[mask] / profile
    k_low = float(ratio.min()) if lower is None else lower
    k_up = float(ratio.max()) if upper is None else upper
    over = np.maximum(ratio - k_up, 0) / k_up
    under = np.maximum(k_low - ratio, 0) / k_low
    violation = float(max(over.max(), under.max()))
    return KernelBounds(k_low, k_up, violation, int(mask.sum()))


def stable_density(alpha: float, t: float, x) -> np.ndarray:
    """``G_t(x)`` on the real line (d = 1) by direct Fourier quadrature.

    ``G_t(x) = pi^-1 int_0^inf exp(-t xi^alpha) cos(xi x) d xi``, truncated
    where the integrand is below 1e-30.
    """
    from scipy import integrate

    cut = (70.0 / t) ** (1.0 / alpha)
    f = lambda xi: math.exp(-t * xi**alpha)
    out = []
    for xv in np.atleast_1d(np.asarray(x, dtype=float)):
        if xv == 0.0:
            v, _ = integrate.quad(f, 0.0, cut, epsabs=1e-13, epsrel=1e-11, limit=400)
        else:
            v, _ = integrate.quad(f, 0.0, cut, weight="cos", wvar=abs(xv), epsabs=1e-13, epsrel=1e-11, limit=400)
        out.append(v / math.pi)
    return np.array(out)


def periodized_stable_density(alpha: float, t: float, x, extent: float, images: int = 2000) -> np.ndarray:
    """Periodization of :func:`stable_density` with the images replaced by their tail asymptote.

    For ``|y| >> t^(1/alpha)``, ``G_t(y) ~ k_alpha t |y|^-(1+alpha)`` with
    ``k_alpha = Gamma(1+alpha) sin(pi alpha/2) / pi``; the remainder is
    ``O(t^2 |y|^-(1+2 alpha))``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = math.gamma(1 + alpha) * math.sin(math.pi * alpha / 2) / math.pi
    m = np.concatenate([np.arange(-images, 0), np.arange(1, images + 1)])
    tail = k * t * np.sum(np.abs(x[:, None] + m[None, :] * extent) ** (-(1 + alpha)), axis=1)
    return stable_density(alpha, t, x) + tail
