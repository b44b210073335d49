"""Named constants of the model.

Conventions: Fourier transforms are angular, ``Ff(xi) = int exp(-i xi.x) f(x) dx``,
and the heat symbol is ``exp(-t |xi|^alpha)``.  The increment constant
``c_agd`` is normalized for a noise whose spatial covariance is
``(2 pi)^-d int |xi|^-gamma exp(i xi.r) d xi``; with that normalization the
one-point variance of the linear solution is ``(2 pi)^-d c21 int_0^t
s^{-(d-gamma)/alpha} ds`` (see :func:`linear_variance`).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ParameterDomainError, QuadratureError
from .model import ModelParams

QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-13
QUAD_LIMIT = 400
ERROR_TARGET = 1e-8

NAMES = ("c11", "c_agd", "c21", "c26", "c14", "hurst")


@dataclass(frozen=True)
class ConstantReport:
    name: str
    value: float
    method: str  # "closed_form" | "quadrature"
    est_abs_error: float = 0.0

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown constant {self.name!r}")
        if self.method not in ("closed_form", "quadrature"):
            raise ValueError(f"unknown method {self.method!r}")
        if not math.isfinite(self.value):
            raise QuadratureError(f"{self.name} evaluated to {self.value}")

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "method": self.method, "est_abs_error": self.est_abs_error}


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere in R^dim (2 for dim=1)."""
    return 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def gaussian_abs_moment(p: float) -> float:
    """E|N|^p for a standard Gaussian N."""
    return 2.0 ** (p / 2) * math.gamma((p + 1) / 2) / math.sqrt(math.pi)


def hurst(params: ModelParams) -> float:
    return params.hurst


def riesz_c11(dim: int, gamma: float) -> float:
    """Normalizing constant of the Riesz covariance ``c11 |x|^-(d-gamma)``."""
    if not 0.0 < gamma < dim:
        raise ParameterDomainError(f"need 0 < gamma < d = {dim}, got gamma={gamma}")
    return 2.0 ** (dim - gamma) * math.pi ** (dim / 2) * math.gamma((dim - gamma) / 2) / math.gamma(gamma / 2)


def _quad(f, a, b, **kw):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        value, err = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT, **kw)
    # tight tolerances trigger roundoff warnings long before the answer is in doubt
    if caught and err > ERROR_TARGET:
        raise QuadratureError(f"quadrature did not converge on [{a}, {b}]: {caught[0].message}",
                              bracket=(value - err, value + err))
    return value, err


def radial_cosine_integral(s: float) -> tuple[float, float]:
    """``int_0^inf r^(-1-s) (1 - cos r) dr`` for ``0 < s < 2`` with an error estimate.

    The origin piece uses an algebraic weight for ``r^(1-s)``; the tail splits
    into the elementary ``int_1^inf r^(-1-s) dr = 1/s`` and a Fourier integral
    handled by QAWF.
    """
    if not 0.0 < s < 2.0:
        raise ParameterDomainError(f"need 0 < s < 2, got s={s}")

    def smooth(r):
        # (1 - cos r) / r^2, written to avoid cancellation near 0
        half = 0.5 * r
        return 0.5 * (np.sinc(half / np.pi)) ** 2

    head, e1 = _quad(smooth, 0.0, 1.0, weight="alg", wvar=(1.0 - s, 0.0))
    osc, e2 = _quad(lambda r: r ** (-1.0 - s), 1.0, np.inf, weight="cos", wvar=1.0)
    value = head + 1.0 / s - osc
    return value, e1 + e2


def angular_factor(dim: int, s: float, e=None) -> tuple[float, float]:
    """``int_{S^{d-1}} |w.e|^s dw`` with an error estimate.

    For ``dim == 2`` the integral is taken over the polar angle relative to the
    given direction ``e`` (so direction independence is a real check).
    """
    if dim == 1:
        return 2.0, 0.0
    if dim == 2:
        if e is None:
            e = (1.0, 0.0)
        e = np.asarray(e, dtype=float)
        norm = float(np.hypot(*e))
        if not abs(norm - 1.0) < 1e-12:
            raise ParameterDomainError(f"e must be a unit vector, |e|={norm}")
        phi = math.atan2(e[1], e[0])
        # zeros of cos(theta - phi) split [0, 2 pi) into pieces with endpoint singularities
        cuts = sorted({(phi + math.pi / 2 + k * math.pi) % (2 * math.pi) for k in range(2)})
        edges = [0.0, *cuts, 2 * math.pi]
        total, err = 0.0, 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a < 1e-15:
                continue
            v, ve = _quad(lambda th: abs(math.cos(th - phi)) ** s, a, b)
            total += v
            err += ve
        return total, err
    # higher dimensions: reduce to the polar angle between w and e
    lower = sphere_area(dim - 1)
    v, ve = _quad(lambda p: abs(math.cos(p)) ** s * math.sin(p) ** (dim - 2), 0.0, math.pi / 2)
    return 2 * lower * v, 2 * lower * ve


def increment_integral(params: ModelParams, e=None) -> tuple[float, float]:
    """``int_{R^d} |w|^-(alpha+gamma) (1 - cos(w.e)) dw`` and its error estimate."""
    s = 2.0 * params.hurst
    radial, er = radial_cosine_integral(s)
    ang, ea = angular_factor(params.dim, s, e)
    return radial * ang, radial * ea + ang * er


def c_alpha_gamma_d(params: ModelParams, e=None) -> ConstantReport:
    value, err = increment_integral(params, e)
    c = (2 * math.pi) ** (-params.dim / 2) * math.sqrt(value)
    # first-order propagation through the square root
    c_err = (2 * math.pi) ** (-params.dim / 2) * err / (2 * math.sqrt(value))
    if c_err > ERROR_TARGET:
        raise QuadratureError(f"c_agd error estimate {c_err:.3g} above target", bracket=(c - c_err, c + c_err))
    return ConstantReport("c_agd", c, "quadrature", c_err)


def _check_c21_domain(params: ModelParams) -> None:
    if not params.dim - params.gamma < params.alpha:
        raise ParameterDomainError(
            f"need d - gamma < alpha for c21 to be finite, got d - gamma = {params.dim - params.gamma:g}"
        )


def _radial_exp_integral(params: ModelParams, rate: float) -> float:
    """``int_{R^d} |xi|^-gamma exp(-rate |xi|^alpha) d xi`` in closed form."""
    a, g, d = params.alpha, params.gamma, params.dim
    return sphere_area(d) * math.gamma((d - g) / a) / (a * rate ** ((d - g) / a))


def c21(params: ModelParams) -> ConstantReport:
    _check_c21_domain(params)
    return ConstantReport("c21", _radial_exp_integral(params, 2.0), "closed_form")


def c21_quadrature(params: ModelParams) -> tuple[float, float]:
    """Direct radial quadrature of c21, independent of the Gamma-function closed form."""
    _check_c21_domain(params)
    a, g, d = params.alpha, params.gamma, params.dim
    f = lambda r: math.exp(-2.0 * r**a)
    head, e1 = _quad(f, 0.0, 1.0, weight="alg", wvar=(d - 1 - g, 0.0))
    tail, e2 = _quad(lambda r: r ** (d - 1 - g) * f(r), 1.0, np.inf)
    area = sphere_area(d)
    return area * (head + tail), area * (e1 + e2)


def c26(params: ModelParams) -> ConstantReport:
    _check_c21_domain(params)
    a, g, d = params.alpha, params.gamma, params.dim
    integral = _radial_exp_integral(params, 1.0)
    value = math.sqrt(a / ((2 * math.pi) ** d * 2.0 ** ((d - g) / a) * (a - d + g)) * integral)
    return ConstantReport("c26", value, "closed_form")


def c14(params: ModelParams) -> ConstantReport:
    c = c_alpha_gamma_d(params)
    p = 1.0 / params.hurst
    value = c.value**p * gaussian_abs_moment(p)
    err = p * c.value ** (p - 1) * gaussian_abs_moment(p) * c.est_abs_error
    return ConstantReport("c14", value, "quadrature", err)


def linear_variance(params: ModelParams, t: float) -> float:
    """One-point variance of the linear solution with zero initial data at time ``t``.

    Uses the noise normalization of this package, i.e. ``(2 pi)^-d`` times the
    c21 closed form integrated in time.
    """
    if t < 0:
        raise ParameterDomainError("t must be nonnegative")
    rho = (params.dim - params.gamma) / params.alpha
    return (2 * math.pi) ** (-params.dim) * c21(params).value * t ** (1 - rho) / (1 - rho)


def all_constants(params: ModelParams) -> list[ConstantReport]:
    return [
        ConstantReport("c11", riesz_c11(params.dim, params.gamma), "closed_form"),
        c_alpha_gamma_d(params),
        c21(params),
        c26(params),
        c14(params),
        ConstantReport("hurst", hurst(params), "closed_form"),
    ]
