"""Time stepping of the mild equation on the periodic grid.

Two schemes share the exact linear flow ``exp(-dt |xi|^alpha)``:

``exp_euler``
    ``u <- S_dt (u + dt b(u) + sigma(u) dW)``.
``exact_ou`` (default)
    Same drift treatment, but the stochastic convolution over a step is
    integrated exactly mode by mode: the noise mode is filtered by
    ``sqrt((1 - exp(-2 lam dt)) / (2 lam dt))`` instead of ``exp(-lam dt)``.
    For additive noise this reproduces the continuous-time law of the
    discretized field exactly for any ``dt``.

Ensembles run in fixed member chunks; chunks may be processed on several
threads but each member's numbers depend only on ``(seed, member, step)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BlowUpError, ConfigurationError, ResolutionError
from .grid import Grid, heat_symbol
from .model import InitSpec, ModelParams
from .noise import NoiseIncrement, _amplitude, sample_noise_batch, spectral_weights
from .rng import INIT, NOISE, Stream

SCHEMES = ("exact_ou", "exp_euler")
BLOWUP_LEVEL = 1e12
CHUNK = 250
GRID_TOL = 1e-9


def _steps(value: float, dt: float, name: str) -> int:
    k = round(value / dt)
    if abs(k * dt - value) > GRID_TOL * max(1.0, abs(value)):
        raise ConfigurationError(f"{name}={value} is not a multiple of dt={dt}")
    return int(k)


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    scheme: str = "exact_ou"
    record_times: tuple = ()
    store_noise: bool = False
    noise_window: float | None = None  # keep increments for steps starting at or after this time

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")
        if self.dt > self.t_end:
            raise ConfigurationError(f"dt={self.dt} exceeds t_end={self.t_end}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        _steps(self.t_end, self.dt, "t_end")
        rec = tuple(float(t) for t in (self.record_times or (self.t_end,)))
        for t in rec:
            if not 0 <= t <= self.t_end + GRID_TOL:
                raise ConfigurationError(f"record time {t} outside [0, t_end]")
            _steps(t, self.dt, "record time")
        if list(rec) != sorted(set(rec)):
            raise ConfigurationError("record_times must be strictly increasing")
        object.__setattr__(self, "record_times", rec)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t_end", float(self.t_end))
        if self.noise_window is not None and not 0 <= self.noise_window <= self.t_end:
            raise ConfigurationError("noise_window must lie in [0, t_end]")

    @property
    def n_steps(self) -> int:
        return _steps(self.t_end, self.dt, "t_end")

    @property
    def record_steps(self) -> tuple[int, ...]:
        return tuple(_steps(t, self.dt, "record time") for t in self.record_times)

    @property
    def first_stored_step(self) -> int:
        if not self.store_noise:
            return self.n_steps
        if self.noise_window is None:
            return 0
        return int(math.floor(self.noise_window / self.dt + GRID_TOL))

    def to_dict(self) -> dict:
        return {
            "dt": self.dt, "t_end": self.t_end, "scheme": self.scheme,
            "record_times": list(self.record_times), "store_noise": self.store_noise,
            "noise_window": self.noise_window,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        data = dict(data)
        unknown = set(data) - {"dt", "t_end", "scheme", "record_times", "store_noise", "noise_window"}
        if unknown:
            raise ConfigurationError(f"unknown solver keys {sorted(unknown)}")
        if "record_times" in data:
            data["record_times"] = tuple(data["record_times"])
        return cls(**data)


@dataclass(frozen=True)
class FieldState:
    t: float
    values: np.ndarray
    step: int
    provenance: tuple = ()  # (seed, member, scheme)


def noise_filter(grid: Grid, alpha: float, dt: float, scheme: str) -> np.ndarray:
    """Per-mode factor applied to a noise increment over one step."""
    lam_dt = grid.wavenumbers**alpha * dt
    if scheme == "exp_euler":
        return np.exp(-lam_dt)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = -np.expm1(-2 * lam_dt) / (2 * lam_dt)
    q = np.where(lam_dt > 0, q, 1.0)
    return np.sqrt(q)


def initial_field(grid: Grid, params: ModelParams, stream: Stream) -> np.ndarray:
    spec: InitSpec = params.init
    p = spec.params
    if spec.kind == "zero":
        return np.zeros(grid.shape)
    if spec.kind == "constant":
        return np.full(grid.shape, float(p.get("value", 0.0)))
    if spec.kind == "bump":
        r2 = np.sum(grid.points() ** 2, axis=-1)
        width = float(p.get("width", 1.0))
        return float(p.get("amplitude", 1.0)) * np.exp(-0.5 * r2 / width**2)
    # random Gaussian field with spectral density |xi|^-(d + 2 eta0), Gaussian-smoothed
    eta0 = params.init_holder
    k = grid.wavenumbers
    smoothing = float(p.get("smoothing", 2 * grid.spacing))
    with np.errstate(divide="ignore"):
        dens = np.where(k > 0, k ** (-(grid.dim + 2 * eta0)), 0.0) / grid.extent**grid.dim
    amp = np.sqrt(grid.size * dens) * np.exp(-0.5 * (smoothing * k) ** 2)
    white = stream.normal(grid.shape, 0, INIT)
    return float(p.get("amplitude", 1.0)) * grid.inverse(amp * grid.forward(white))


def _check_finite(u: np.ndarray, step: int) -> None:
    peak = np.max(np.abs(u)) if u.size else 0.0
    if not np.isfinite(peak) or peak > BLOWUP_LEVEL:
        raise BlowUpError(f"solution left the finite range at step {step} (max |u| = {peak:.3g})", step=step)


def step(state: FieldState, noise: NoiseIncrement, params: ModelParams, grid: Grid, cfg: SolverConfig) -> FieldState:
    """One step of the configured scheme for a single member."""
    if abs(noise.dt - cfg.dt) > GRID_TOL * cfg.dt:
        raise ConfigurationError(f"noise dt {noise.dt} does not match solver dt {cfg.dt}")
    u = state.values
    _check_finite(u, state.step)
    semi = heat_symbol(grid, params.alpha, cfg.dt)
    det = u + cfg.dt * params.drift(u)
    sto = params.diffusion(u) * noise.values
    if cfg.scheme == "exp_euler":
        out_hat = semi * grid.forward(det + sto)
    else:
        out_hat = semi * grid.forward(det) + noise_filter(grid, params.alpha, cfg.dt, cfg.scheme) * grid.forward(sto)
    out = grid.inverse(out_hat)
    _check_finite(out, state.step + 1)
    return FieldState((state.step + 1) * cfg.dt, out, state.step + 1, state.provenance)


@dataclass
class EnsembleRun:
    """Recorded fields of an ensemble; ``fields[i, m]`` is member ``m`` at ``times[i]``."""

    params: ModelParams
    grid: Grid
    cfg: SolverConfig
    seed: int
    members: int
    times: np.ndarray
    fields: np.ndarray
    noise: np.ndarray | None = None  # (steps, members, *shape) from cfg.first_stored_step on
    member_offset: int = 0
    meta: dict = field(default_factory=dict)

    def field_at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.abs(self.times - t) <= GRID_TOL * max(1.0, t))
        if idx.size == 0:
            raise ConfigurationError(f"time {t} was not recorded; recorded times are {self.times.tolist()}")
        return self.fields[idx[0]]

    def noise_steps(self, step: int) -> np.ndarray:
        """Noise increments of all members at one step (regenerated if not stored)."""
        first = self.cfg.first_stored_step
        if self.noise is not None and first <= step < first + self.noise.shape[0]:
            return self.noise[step - first]
        streams = [Stream(self.seed, self.member_offset + m) for m in range(self.members)]
        return sample_noise_batch(self.grid, self.params, self.cfg.dt, streams, step)

    def state(self, member: int, t: float) -> FieldState:
        i = int(np.flatnonzero(np.abs(self.times - t) <= GRID_TOL * max(1.0, t))[0])
        return FieldState(float(self.times[i]), self.fields[i, member], self.cfg.record_steps[i],
                          (self.seed, self.member_offset + member, self.cfg.scheme))


def _run_chunk(params: ModelParams, grid: Grid, cfg: SolverConfig, seed: int, member_ids: list[int]):
    streams = [Stream(seed, m) for m in member_ids]
    nm = len(streams)
    rec_steps = cfg.record_steps
    rec = np.empty((len(rec_steps), nm) + grid.shape)
    first = cfg.first_stored_step
    stored = np.empty((cfg.n_steps - first, nm) + grid.shape) if cfg.store_noise else None
    semi = heat_symbol(grid, params.alpha, cfg.dt)
    filt = noise_filter(grid, params.alpha, cfg.dt, cfg.scheme)
    amp = _amplitude(grid, params.gamma, "cell")
    sqdt = math.sqrt(cfg.dt)
    u = np.stack([initial_field(grid, params, s) for s in streams])
    spectral = params.is_linear
    sigma0 = float(params.diffusion(np.zeros(1))[0]) if spectral else None
    u_hat = grid.forward(u)
    noise_gain = semi if cfg.scheme == "exp_euler" else filt
    r = 0
    for n in range(cfg.n_steps + 1):
        while r < len(rec_steps) and rec_steps[r] == n:
            rec[r] = grid.inverse(u_hat) if spectral else u
            _check_finite(rec[r], n)
            r += 1
        if n == cfg.n_steps:
            break
        white = np.stack([s.normal(grid.shape, n, NOISE) for s in streams])
        w_hat = sqdt * amp * grid.forward(white)
        if stored is not None and n >= first:
            stored[n - first] = grid.inverse(w_hat)
        if spectral:
            u_hat = semi * u_hat + (sigma0 * noise_gain) * w_hat
            if not np.isfinite(u_hat[..., :1]).all():
                raise BlowUpError(f"solution left the finite range at step {n + 1}", step=n + 1)
        else:
            w = grid.inverse(w_hat)
            det = u + cfg.dt * params.drift(u)
            sto = params.diffusion(u) * w
            if cfg.scheme == "exp_euler":
                u_hat = semi * grid.forward(det + sto)
            else:
                u_hat = semi * grid.forward(det) + filt * grid.forward(sto)
            u = grid.inverse(u_hat)
            _check_finite(u, n + 1)
    return rec, stored


def simulate_ensemble(params: ModelParams, grid: Grid, cfg: SolverConfig, seed: int, members: int,
                      member_offset: int = 0, threads: int = 1, chunk: int = CHUNK) -> EnsembleRun:
    """Run ``members`` independent realizations and keep the fields at ``cfg.record_times``."""
    if params.dim != grid.dim:
        raise ConfigurationError(f"model dim {params.dim} does not match grid dim {grid.dim}")
    if members < 1:
        raise ConfigurationError("members must be at least 1")
    ids = list(range(member_offset, member_offset + members))
    chunks = [ids[i:i + chunk] for i in range(0, members, chunk)]
    work = lambda c: _run_chunk(params, grid, cfg, seed, c)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    fields = np.concatenate([p[0] for p in parts], axis=1)
    noise = np.concatenate([p[1] for p in parts], axis=1) if cfg.store_noise else None
    return EnsembleRun(params, grid, cfg, int(seed), members, np.array(cfg.record_times), fields, noise,
                       member_offset)


def simulate(params: ModelParams, grid: Grid, cfg: SolverConfig, stream: Stream) -> list[FieldState]:
    """Record one member's trajectory at ``cfg.record_times``."""
    run = simulate_ensemble(params, grid, cfg, stream.seed, 1, member_offset=stream.member)
    return [run.state(0, t) for t in run.times]


def semidiscrete_variance(grid: Grid, params: ModelParams, t: float) -> float:
    """One-point variance of the linear equation on this grid, exact in time."""
    s = spectral_weights(grid, params.gamma)
    lam = grid.wavenumbers**params.alpha
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(lam > 0, -np.expm1(-2 * lam * t) / (2 * lam), t)
    return _half_spectrum_sum(grid, s * g)


def scheme_variance(grid: Grid, params: ModelParams, cfg: SolverConfig, t: float) -> float:
    """One-point variance produced by the linear scheme after ``t / dt`` steps."""
    n = _steps(t, cfg.dt, "t")
    s = spectral_weights(grid, params.gamma)
    lam_dt = grid.wavenumbers**params.alpha * cfg.dt
    gain2 = noise_filter(grid, params.alpha, cfg.dt, cfg.scheme) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        geo = np.where(lam_dt > 0, -np.expm1(-2 * lam_dt * n) / -np.expm1(-2 * lam_dt), n)
    return _half_spectrum_sum(grid, s * cfg.dt * gain2 * geo)


def _half_spectrum_sum(grid: Grid, values: np.ndarray) -> float:
    """Sum over the full lattice of a symmetric function given on the half spectrum."""
    return float(grid.inverse(values).flat[0] * grid.size)


@dataclass(frozen=True)
class RegressionReport:
    slope: float
    exponent: float
    ci_low: float
    ci_high: float
    lags: np.ndarray
    moments: np.ndarray

    def to_dict(self) -> dict:
        return {"slope": self.slope, "exponent": self.exponent, "ci_low": self.ci_low, "ci_high": self.ci_high}


@dataclass(frozen=True)
class HolderReport:
    space: RegressionReport | None
    time: RegressionReport | None
    moment_order: int


def _loglog_fit(lags: np.ndarray, per_member: np.ndarray, k: int, blocks: int, level: float) -> RegressionReport:
    """Fit ``log mean |incr|^k`` on ``log lag``; jackknife CI over member blocks."""
    x = np.log(lags)

    def slope_of(moments):
        return float(np.polyfit(x, np.log(moments), 1)[0])

    full = per_member.mean(axis=0)
    slope = slope_of(full)
    m = per_member.shape[0]
    groups = np.array_split(np.arange(m), min(blocks, m))
    loo = np.array([slope_of(np.delete(per_member, g, axis=0).mean(axis=0)) for g in groups])
    g = len(groups)
    se = math.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2))
    z = stats.t.ppf(0.5 + level / 2, g - 1) * se
    return RegressionReport(slope, slope / k, float((slope - z) / k), float((slope + z) / k), lags, full)


def holder_scaling_report(run: EnsembleRun, t: float, space_lags=None, time_lags=None, moment_order: int = 2,
                          direction: int = 0, min_members: int = 1000, blocks: int = 20,
                          level: float = 0.95) -> HolderReport:
    """Regress ensemble moments of spatial and temporal increments on the lag.

    Spatial increments ``u_t(x) - u_t(x - r e)`` are averaged over all sites
    (the torus makes them stationary); temporal ones use ``u_{t+tau} - u_t``
    for recorded ``t + tau``.  ``exponent`` is ``slope / moment_order``.
    """
    if run.members < min_members:
        raise ConfigurationError(f"need at least {min_members} members, got {run.members}")
    if moment_order < 1 or int(moment_order) != moment_order:
        raise ConfigurationError("moment_order must be a positive integer")
    grid = run.grid
    k = int(moment_order)
    space = time = None
    base = run.field_at(t)
    if space_lags is not None:
        lags = np.asarray(space_lags, dtype=float)
        lo, hi = 4 * grid.spacing, grid.extent / 16
        if lags.min() < lo - GRID_TOL or lags.max() > hi + GRID_TOL:
            raise ResolutionError(f"spatial lags must lie in the resolved band [{lo}, {hi}]")
        axis = 1 + direction
        per = np.empty((run.members, lags.size))
        for j, r in enumerate(lags):
            shift = round(r / grid.spacing)
            if abs(shift * grid.spacing - r) > GRID_TOL:
                raise ConfigurationError(f"lag {r} is not a multiple of the spacing")
            diff = base - np.roll(base, shift, axis=axis)
            per[:, j] = np.mean(np.abs(diff) ** k, axis=tuple(range(1, base.ndim)))
        space = _loglog_fit(lags, per, k, blocks, level)
    if time_lags is not None:
        taus = np.asarray(time_lags, dtype=float)
        if taus.min() <= 0:
            raise ResolutionError("time lags must be positive")
        per = np.empty((run.members, taus.size))
        for j, tau in enumerate(taus):
            diff = run.field_at(t + tau) - base
            per[:, j] = np.mean(np.abs(diff) ** k, axis=tuple(range(1, base.ndim)))
        time = _loglog_fit(taus, per, k, blocks, level)
    return HolderReport(space, time, k)
