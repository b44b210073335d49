import math

import numpy as np
import pytest
from scipy import stats

from fracshe.constants import linear_variance
from fracshe.errors import BlowUpError, ConfigurationError, ResolutionError
from fracshe.grid import green_kernel, make_grid
from fracshe.model import FunctionSpec, InitSpec, ModelParams
from fracshe.noise import NoiseIncrement, sample_noise
from fracshe.rng import Stream
from fracshe.solver import (
    FieldState, SolverConfig, holder_scaling_report, initial_field, scheme_variance, semidiscrete_variance, simulate,
    simulate_ensemble, step,
)

P = ModelParams(1.5, 0.5, 1)
SMALL = make_grid(1, 8.0, 128)


def zero_noise(grid, dt):
    return NoiseIncrement(dt, np.zeros(grid.shape), (0, 0, 0))


def test_constant_preserved():
    p = ModelParams(1.5, 0.5, diffusion=FunctionSpec.constant(0.0))
    cfg = SolverConfig(0.01, 0.1)
    state = FieldState(0.0, np.full(SMALL.shape, 2.5), 0)
    for _ in range(10):
        state = step(state, zero_noise(SMALL, 0.01), p, SMALL, cfg)
    np.testing.assert_allclose(state.values, 2.5, rtol=1e-14)
    run = simulate_ensemble(ModelParams(1.5, 0.5, diffusion=FunctionSpec.constant(0.0), init=InitSpec("constant", {"value": 2.5})),
                            SMALL, cfg, 0, 2)
    np.testing.assert_allclose(run.fields, 2.5, rtol=1e-14)


def test_constant_forcing_ode():
    p = ModelParams(1.5, 0.5, drift=FunctionSpec.constant(1.0), diffusion=FunctionSpec.constant(0.0))
    dt = 1 / 64
    for scheme in ("exp_euler", "exact_ou"):
        out = simulate(p, SMALL, SolverConfig(dt, 1.0, scheme), Stream(0))[-1]
        assert out.t == 1.0
        assert np.max(np.abs(out.values - 1.0)) <= 2 * dt


def test_single_step_is_kernel_convolution():
    p = ModelParams(1.5, 0.5, diffusion=FunctionSpec.constant(0.0))
    g = make_grid(1, 16.0, 256)
    u0 = np.exp(-g.coords**2) * np.cos(3 * g.coords)
    dt = 0.05
    out = step(FieldState(0.0, u0, 0), zero_noise(g, dt), p, g, SolverConfig(dt, dt, "exp_euler"))
    kern = g.to_lag_order(green_kernel(g, 1.5, dt).values)
    conv = g.inverse(g.forward(u0) * g.forward(kern)) * g.spacing
    assert np.max(np.abs(out.values - conv)) < 1e-12


def test_step_and_ensemble_paths_agree():
    # the per-member step() and the batched ensemble loop implement the same map
    p = ModelParams(1.5, 0.5, diffusion=FunctionSpec.sine(1.0, 0.5))
    cfg = SolverConfig(1 / 64, 0.25, "exact_ou")
    state = FieldState(0.0, np.zeros(SMALL.shape), 0)
    for n in range(cfg.n_steps):
        state = step(state, sample_noise(SMALL, p, cfg.dt, Stream(4, 1), n), p, SMALL, cfg)
    run = simulate_ensemble(p, SMALL, cfg, 4, 1, member_offset=1)
    np.testing.assert_allclose(run.fields[-1, 0], state.values, atol=1e-12)


def test_exact_ou_scheme_is_exact_in_law():
    for dt in (1 / 8, 1 / 64, 1 / 512):
        v = scheme_variance(SMALL, P, SolverConfig(dt, 1.0), 1.0)
        assert v == pytest.approx(semidiscrete_variance(SMALL, P, 1.0), rel=1e-12)


def test_exp_euler_weak_order():
    dts = [1 / 512, 1 / 1024, 1 / 2048, 1 / 4096]
    ref = semidiscrete_variance(SMALL, P, 1.0)
    err = np.array([abs(scheme_variance(SMALL, P, SolverConfig(dt, 1.0, "exp_euler"), 1.0) - ref) for dt in dts])
    orders = np.log2(err[:-1] / err[1:])
    assert np.all(orders >= 0.8)


@pytest.mark.parametrize("t", [0.5, 1.0])
def test_discrete_variance_matches_closed_form(t):
    g = make_grid(1, 8.0, 1024)
    assert semidiscrete_variance(g, P, t) == pytest.approx(linear_variance(P, t), rel=0.01)


@pytest.fixture(scope="module")
def small_run():
    cfg = SolverConfig(1 / 64, 1.0, record_times=(0.5, 1.0))
    return simulate_ensemble(P, SMALL, cfg, 21, 2000)


def test_gaussian_marginals(small_run):
    skew = stats.skew(small_run.fields[-1][:, [0, 40, 90]], axis=0)
    assert np.all(np.abs(skew) < 0.1)


def test_stationary_variance(small_run):
    f = small_run.fields[-1]
    v = f.var(axis=0, ddof=1)
    se = v * math.sqrt(2 / (f.shape[0] - 1))
    for a, b in ((0, 40), (40, 90), (0, 90)):
        assert abs(v[a] - v[b]) < 3 * math.hypot(se[a], se[b])


def test_ensemble_variance_against_scheme(small_run):
    for i, t in enumerate(small_run.times):
        emp = small_run.fields[i].var(axis=0, ddof=1).mean()
        assert emp == pytest.approx(scheme_variance(SMALL, P, small_run.cfg, t), rel=0.08)


def test_determinism_and_thread_independence():
    cfg = SolverConfig(1 / 32, 0.5, record_times=(0.25, 0.5))
    p = ModelParams(1.5, 0.5, diffusion=FunctionSpec.sine(1.0, 0.5))
    a = simulate_ensemble(p, SMALL, cfg, 5, 30, chunk=8)
    b = simulate_ensemble(p, SMALL, cfg, 5, 30, chunk=8, threads=3)
    c = simulate_ensemble(p, SMALL, cfg, 5, 30, chunk=8)
    assert a.fields.tobytes() == b.fields.tobytes() == c.fields.tobytes()


def test_simulate_matches_ensemble_member():
    cfg = SolverConfig(1 / 32, 0.5)
    states = simulate(P, SMALL, cfg, Stream(9, 4))
    run = simulate_ensemble(P, SMALL, cfg, 9, 6)
    assert states[0].values.tobytes() == run.fields[0, 4].tobytes()
    assert states[0].provenance == (9, 4, "exact_ou")
    assert states[0].step == 16


def test_blow_up_detected():
    p = ModelParams(1.5, 0.5, drift=FunctionSpec.linear(5000.0), diffusion=FunctionSpec.constant(0.0),
                    init=InitSpec("constant", {"value": 1.0}))
    with pytest.raises(BlowUpError) as info:
        simulate_ensemble(p, SMALL, SolverConfig(0.01, 1.0), 0, 1)
    assert 0 < info.value.step < 100


def test_noise_dt_mismatch():
    with pytest.raises(ConfigurationError):
        step(FieldState(0.0, np.zeros(SMALL.shape), 0), zero_noise(SMALL, 0.1), P, SMALL, SolverConfig(0.01, 1.0))


@pytest.mark.parametrize("kw,fragment", [
    ({"dt": 0.0, "t_end": 1.0}, "dt must be positive"),
    ({"dt": 2.0, "t_end": 1.0}, "exceeds t_end"),
    ({"dt": 0.3, "t_end": 1.0}, "not a multiple"),
    ({"dt": 0.25, "t_end": 1.0, "record_times": (0.3,)}, "not a multiple"),
    ({"dt": 0.25, "t_end": 1.0, "record_times": (2.0,)}, "outside"),
    ({"dt": 0.25, "t_end": 1.0, "scheme": "rk4"}, "unknown scheme"),
])
def test_solver_config_validation(kw, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        SolverConfig(**kw)


def test_solver_config_round_trip():
    cfg = SolverConfig(0.125, 1.0, "exp_euler", (0.5, 1.0), True, 0.5)
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        SolverConfig.from_dict({**cfg.to_dict(), "cfl": 1})


def test_stored_noise_window_matches_regeneration():
    cfg = SolverConfig(1 / 16, 0.5, store_noise=True, noise_window=0.25)
    run = simulate_ensemble(P, SMALL, cfg, 3, 4)
    assert run.noise.shape == (4, 4, SMALL.n)
    stored = run.noise_steps(5)
    run.noise = None
    np.testing.assert_allclose(run.noise_steps(5), stored, rtol=1e-13, atol=1e-15)


def test_initial_fields():
    p = ModelParams(1.5, 0.5, init=InitSpec("bump", {"amplitude": 2.0, "width": 0.5}))
    u = initial_field(SMALL, p, Stream(0))
    assert u.max() == pytest.approx(2.0)
    q = ModelParams(1.5, 0.5, init=InitSpec("holder", {"amplitude": 1.0, "smoothing": 0.05}), init_holder=0.8)
    a = initial_field(SMALL, q, Stream(0, 1))
    b = initial_field(SMALL, q, Stream(0, 1))
    assert a.tobytes() == b.tobytes() and abs(a.mean()) < 1e-12
    assert not np.array_equal(a, initial_field(SMALL, q, Stream(0, 2)))


def test_holder_report_exponents(small_run):
    rep = holder_scaling_report(small_run, 1.0, space_lags=[0.25, 0.3125, 0.375, 0.5], min_members=1000)
    assert rep.space.exponent == pytest.approx(0.5, abs=0.1)
    assert rep.space.ci_low <= rep.space.exponent <= rep.space.ci_high


def test_holder_report_guards(small_run):
    with pytest.raises(ConfigurationError):
        holder_scaling_report(small_run, 1.0, space_lags=[0.25], min_members=5000)
    with pytest.raises(ResolutionError):
        holder_scaling_report(small_run, 1.0, space_lags=[SMALL.spacing, 0.25])
