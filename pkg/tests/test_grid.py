import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracshe.errors import ConfigurationError, ParameterDomainError, ResolutionError
from fracshe.grid import (
    apply_semigroup, green_kernel, heat_symbol, kernel_bounds_check, make_grid, periodized_stable_density,
    stable_density,
)


def periodized_cauchy(x, t, L):
    a = 2 * math.pi / L
    return (1 / L) * np.sinh(a * t) / (np.cosh(a * t) - np.cos(a * x))


def test_make_grid_examples():
    assert make_grid(1, 32.0, 1024).spacing == 0.03125
    assert make_grid(2, 16.0, 256).size == 65536


@pytest.mark.parametrize("args,fragment", [
    ((1, 32.0, 1023), "even"),
    ((1, 32.0, 6), "at least 8"),
    ((1, -1.0, 64), "extent"),
    ((3, 8.0, 16), "dim"),
    ((2, 8.0, 8192), "memory cap"),
])
def test_make_grid_rejects(args, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        make_grid(*args)


def test_frequency_lattice_symmetric():
    # full axis: xi and -xi both present except the single Nyquist row
    g = make_grid(2, 10.0, 16)
    k_full, k_last = (np.ravel(k) for k in g.axis_frequencies)
    body = k_full[np.abs(k_full) < g.nyquist]
    np.testing.assert_allclose(np.sort(body), np.sort(-body), atol=1e-12)
    assert np.sum(np.isclose(np.abs(k_full), g.nyquist)) == 1
    # half axis holds 0 .. Nyquist; |xi| is even in the full axis
    np.testing.assert_allclose(k_last, np.abs(k_full[:9]), atol=1e-12)
    w = g.wavenumbers
    assert w.shape == (16, 9)
    np.testing.assert_array_equal(w[1:8], w[15:8:-1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_round_trip(seed, dim):
    g = make_grid(dim, 5.0, 32)
    f = np.random.default_rng(seed).standard_normal((3,) + g.shape)
    back = g.inverse(g.forward(f))
    assert np.max(np.abs(back - f)) <= 1e-12 * np.max(np.abs(f))


def test_nyquist_column_is_real_for_real_fields():
    g = make_grid(1, 4.0, 16)
    f = np.random.default_rng(0).standard_normal(16)
    assert g.forward(f)[-1].imag == 0.0


def test_gaussian_kernel_closed_form():
    g = make_grid(1, 32.0, 1024)
    ks = green_kernel(g, 2.0, 1.0)
    x = g.coords
    exact = np.exp(-x**2 / 4) / math.sqrt(4 * math.pi)
    assert np.max(np.abs(ks.values - exact)) < 1e-8
    assert ks.values[g.site_index(0.0)] == pytest.approx((4 * math.pi) ** -0.5, abs=1e-12)


def test_gaussian_kernel_2d():
    g = make_grid(2, 16.0, 128)
    ks = green_kernel(g, 2.0, 0.5)
    r2 = np.sum(g.points() ** 2, axis=-1)
    exact = np.exp(-r2 / 2) / (2 * math.pi)
    assert np.max(np.abs(ks.values - exact)) < 1e-8
    assert ks.mass() == pytest.approx(1.0, abs=1e-6)


def test_cauchy_kernel_periodized_closed_form():
    g = make_grid(1, 32.0, 1024)
    ks = green_kernel(g, 1.0, 1.0)
    assert np.max(np.abs(ks.values - periodized_cauchy(g.coords, 1.0, 32.0))) < 1e-8
    # the line kernel 1/pi at x=0 differs only by the periodic images
    assert ks.values[g.site_index(0.0)] == pytest.approx(1 / math.pi, abs=3e-3)


@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_scaling_two_grids(t):
    alpha = 1.5
    g = make_grid(1, 64.0, 4096)
    s = t ** (-1 / alpha)
    k_t = green_kernel(g, alpha, t)
    k_1 = green_kernel(make_grid(1, 64.0 * s, 4096), alpha, 1.0)
    assert np.max(np.abs(k_t.values - s * k_1.values)) < 1e-5


@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_scaling_against_independent_quadrature(t):
    alpha = 1.5
    g = make_grid(1, 64.0, 4096)
    idx = np.flatnonzero(np.abs(g.coords) <= 8.0)[::32]
    ref = periodized_stable_density(alpha, t, g.coords[idx], g.extent)
    assert np.max(np.abs(green_kernel(g, alpha, t).values[idx] - ref)) < 1e-5
    # scaling identity of the line density itself
    x = g.coords[idx]
    s = t ** (-1 / alpha)
    np.testing.assert_allclose(stable_density(alpha, t, x), s * stable_density(alpha, 1.0, s * x), atol=1e-10)


def test_specific_value_alpha_15():
    g = make_grid(1, 64.0, 4096)
    ks = green_kernel(g, 1.5, 0.7)
    x = g.site_index(0.3125)
    ref = periodized_stable_density(1.5, 0.7, [0.3125], 64.0)[0]
    assert ks.values[x] == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("alpha,t", [(1.5, 0.1), (2.0, 2.0), (1.2, 1.0)])
def test_mass_one(alpha, t):
    assert green_kernel(make_grid(1, 32.0, 1024), alpha, t).mass() == pytest.approx(1.0, abs=1e-6)


def test_semigroup_exact_in_transform_domain():
    g = make_grid(1, 16.0, 512)
    np.testing.assert_allclose(heat_symbol(g, 1.5, 0.3) * heat_symbol(g, 1.5, 0.4), heat_symbol(g, 1.5, 0.7),
                               rtol=1e-12, atol=1e-300)


def test_semigroup_convolution():
    g = make_grid(1, 32.0, 1024)
    ks = green_kernel(g, 1.5, 0.3)
    kt = green_kernel(g, 1.5, 0.4)
    # circular convolution of G_s and G_t sampled on the grid
    conv = g.to_centered(g.inverse(g.forward(g.to_lag_order(ks.values)) * g.forward(g.to_lag_order(kt.values))))
    conv *= g.spacing
    assert np.max(np.abs(conv - green_kernel(g, 1.5, 0.7).values)) < 1e-8


def test_apply_semigroup_matches_kernel():
    g = make_grid(1, 16.0, 256)
    delta = np.zeros(g.n)
    delta[g.site_index(0.0)] = 1 / g.spacing
    np.testing.assert_allclose(apply_semigroup(g, delta, 1.5, 0.5), green_kernel(g, 1.5, 0.5).values, atol=1e-12)


def test_resolution_guard():
    g = make_grid(1, 32.0, 64)
    with pytest.raises(ResolutionError, match="increase n or t"):
        green_kernel(g, 1.5, 1e-4)


def test_kernel_domain_errors():
    g = make_grid(1, 32.0, 64)
    with pytest.raises(ParameterDomainError):
        green_kernel(g, 2.5, 1.0)
    with pytest.raises(ParameterDomainError):
        green_kernel(g, 1.5, 0.0)


@pytest.mark.parametrize("alpha,t", [(1.5, 1.0), (1.9, 0.5)])
def test_kernel_bounds(alpha, t):
    ks = green_kernel(make_grid(1, 32.0, 1024), alpha, t)
    rep = kernel_bounds_check(ks)
    assert rep.max_violation == 0.0
    assert 0 < rep.lower < rep.upper and rep.ratio < 100


def test_kernel_bounds_violation_reported():
    ks = green_kernel(make_grid(1, 32.0, 1024), 1.5, 1.0)
    fitted = kernel_bounds_check(ks)
    tight = kernel_bounds_check(ks, upper=fitted.upper / 2)
    assert tight.max_violation == pytest.approx(1.0)


def test_kernel_bounds_gaussian_rejected():
    ks = green_kernel(make_grid(1, 32.0, 1024), 2.0, 1.0)
    with pytest.raises(ParameterDomainError):
        kernel_bounds_check(ks)


def test_shift_index_off_lattice():
    g = make_grid(1, 8.0, 64)
    assert g.shift_index(0.25) == (2,)
    with pytest.raises(ConfigurationError):
        g.shift_index(0.1)
