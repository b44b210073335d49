"""Statistical checks of the increment limit theorems on simulated ensembles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from .constants import c14 as c14_report
from .constants import c_alpha_gamma_d
from .errors import ConfigurationError, DegenerateTestError
from .fbm import fbm_variation_oracle
from .grid import Grid
from .model import FunctionSpec, ModelParams
from .noise import spectral_weights
from .rng import SHUFFLE, Stream
from .solver import GRID_TOL, EnsembleRun, FieldState, noise_filter

# ---------------------------------------------------------------------------
# configuration and result types


@dataclass(frozen=True)
class EstimatorConfig:
    probe_dirs: tuple = ((1.0,),)
    eps_ladder: tuple = ()
    moment_order: int = 2
    variation_levels: tuple = ()
    interval: tuple = (0.0, 1.0)
    ensemble_size: int = 2000
    significance: float = 0.01
    time: float | None = None
    anchor: tuple | None = None
    k0: float = math.inf

    def __post_init__(self):
        dirs = tuple(tuple(float(c) for c in np.atleast_1d(e)) for e in self.probe_dirs)
        for e in dirs:
            if abs(math.hypot(*e) - 1.0) > 1e-12:
                raise ConfigurationError(f"probe direction {e} is not a unit vector")
        object.__setattr__(self, "probe_dirs", dirs)
        object.__setattr__(self, "eps_ladder", tuple(float(x) for x in self.eps_ladder))
        object.__setattr__(self, "variation_levels", tuple(int(n) for n in self.variation_levels))
        k = self.moment_order
        if int(k) != k or k < 2 or k % 2 or k > self.k0:
            raise ConfigurationError(f"moment_order must be an even integer in [2, k0={self.k0}], got {k}")
        for n in self.variation_levels:
            if n < 1 or n & (n - 1):
                raise ConfigurationError(f"variation level {n} is not a power of two")
        a1, a2 = self.interval
        if not a2 > a1:
            raise ConfigurationError(f"interval needs A2 > A1, got {self.interval}")
        object.__setattr__(self, "interval", (float(a1), float(a2)))
        if not 0 < self.significance < 1:
            raise ConfigurationError("significance must lie in (0, 1)")
        if self.ensemble_size < 1:
            raise ConfigurationError("ensemble_size must be positive")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", tuple(float(c) for c in np.atleast_1d(self.anchor)))

    def validate(self, grid: Grid) -> None:
        """Check the ladder against the resolved band ``[4h, L/16]`` and lattice alignment."""
        lo, hi = 4 * grid.spacing, grid.extent / 16
        for eps in self.eps_ladder:
            if not lo - GRID_TOL <= eps <= hi + GRID_TOL:
                raise ConfigurationError(f"eps={eps} outside the resolved band [{lo}, {hi}]")
            for e in self.probe_dirs:
                if len(e) != grid.dim:
                    raise ConfigurationError(f"probe direction {e} does not match dim {grid.dim}")
                grid.shift_index(eps * np.asarray(e))

    def to_dict(self) -> dict:
        return {
            "probe_dirs": [list(e) for e in self.probe_dirs], "eps_ladder": list(self.eps_ladder),
            "moment_order": self.moment_order, "variation_levels": list(self.variation_levels),
            "interval": list(self.interval), "ensemble_size": self.ensemble_size,
            "significance": self.significance, "time": self.time,
            "anchor": None if self.anchor is None else list(self.anchor),
            "k0": None if math.isinf(self.k0) else self.k0,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown estimator keys {sorted(unknown)}")
        if data.get("k0", 0) is None:
            data["k0"] = math.inf
        for key in ("probe_dirs", "eps_ladder", "variation_levels", "interval"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def delta_rule(beta: float, hurst: float) -> float:
    return 1.0 + beta ** (1.0 + 1.0 / hurst)


@dataclass(frozen=True)
class LocalizationConfig:
    beta_ladder: tuple
    eps: float
    anchor: tuple  # (t, x)

    def __post_init__(self):
        betas = tuple(float(b) for b in self.beta_ladder)
        if len(betas) < 2:
            raise ConfigurationError("beta_ladder needs at least two entries")
        if any(b <= 1 for b in betas):
            raise ConfigurationError(f"every beta must exceed 1, got {betas}")
        if list(betas) != sorted(betas):
            raise ConfigurationError("beta_ladder must be increasing")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        object.__setattr__(self, "beta_ladder", betas)
        t, x = self.anchor
        object.__setattr__(self, "anchor", (float(t), tuple(float(c) for c in np.atleast_1d(x))))

    def deltas(self, hurst: float) -> np.ndarray:
        return np.array([delta_rule(b, hurst) for b in self.beta_ladder])

    def validate(self, grid: Grid, params: ModelParams) -> None:
        t, _ = self.anchor
        for b, d in zip(self.beta_ladder, self.deltas(params.hurst)):
            if b * self.eps**params.alpha > t + GRID_TOL:
                raise ConfigurationError(f"box for beta={b} starts before time 0 (needs t >= beta eps^alpha)")
            if self.eps * d >= grid.extent / 2:
                raise ConfigurationError(
                    f"ball radius eps*delta={self.eps * d:g} for beta={b} does not fit in the torus of extent {grid.extent}"
                )

    def to_dict(self) -> dict:
        t, x = self.anchor
        return {"beta_ladder": list(self.beta_ladder), "eps": self.eps, "anchor": [t, list(x)]}

    @classmethod
    def from_dict(cls, data: dict) -> "LocalizationConfig":
        data = dict(data)
        unknown = set(data) - {"beta_ladder", "eps", "anchor"}
        if unknown:
            raise ConfigurationError(f"unknown localization keys {sorted(unknown)}")
        return cls(tuple(data["beta_ladder"]), data["eps"], tuple(data["anchor"]))


@dataclass
class EnsembleStats:
    name: str
    values: np.ndarray
    mean: float = 0.0
    stderr: float = 0.0
    extras: dict = field(default_factory=dict)
    passed: bool | None = None
    qualitative: bool = False

    @classmethod
    def from_values(cls, name: str, values, **kw) -> "EnsembleStats":
        v = np.asarray(values, dtype=float)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(name, v, float(v.mean()), se, **kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "mean": self.mean, "stderr": self.stderr, "passed": self.passed,
            "qualitative": self.qualitative, "extras": _jsonable(self.extras),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# increments


def _values_of(state) -> np.ndarray:
    return state.values if isinstance(state, FieldState) else np.asarray(state)


def gradient(state, x, e, eps: float, grid: Grid) -> float:
    """``u_t(x) - u_t(x - eps e)`` by lattice lookup on the torus."""
    u = _values_of(state)
    site = grid.site_index(x)
    shift = grid.shift_index(eps * np.atleast_1d(np.asarray(e, dtype=float)))
    back = tuple((i - s) % grid.n for i, s in zip(site, shift))
    return float(u[site] - u[back])


def gradient_field(values: np.ndarray, grid: Grid, e, eps: float) -> np.ndarray:
    """``u(x) - u(x - eps e)`` at every site; leading axes are batch axes."""
    shift = grid.shift_index(eps * np.atleast_1d(np.asarray(e, dtype=float)))
    return values - np.roll(values, shift, axis=grid.axes)


def increment_norms(run: EnsembleRun, t: float, eps_ladder, e=None) -> EnsembleStats:
    """``|| u_t(x) - u_t(x - eps e) ||_L2 / eps^H`` per eps, pooled over sites and members.

    ``extras['ratio']`` divides by ``c_agd``; the standard error comes from the
    per-member site averages.
    """
    grid, params = run.grid, run.params
    e = (1.0,) + (0.0,) * (grid.dim - 1) if e is None else e
    H = params.hurst
    c = c_alpha_gamma_d(params).value
    f = run.field_at(t)
    norms, ses = [], []
    for eps in eps_ladder:
        g2 = np.mean(gradient_field(f, grid, e, eps) ** 2, axis=grid.axes)
        m2 = g2.mean()
        norms.append(math.sqrt(m2) / eps**H)
        ses.append(0.5 * g2.std(ddof=1) / math.sqrt(g2.size) / math.sqrt(m2) / eps**H)
    norms = np.array(norms)
    return EnsembleStats("increment_norms", norms, float(norms.mean()), float(np.max(ses)),
                         {"eps": list(eps_ladder), "ratio": norms / c, "stderr": ses, "c_agd": c})


# ---------------------------------------------------------------------------
# gradient CLT


def _anchor_index(grid: Grid, anchor) -> tuple:
    return grid.site_index((0.0,) * grid.dim if anchor is None else anchor)


def _derangement(m: int, stream: Stream) -> np.ndarray:
    gen = stream.generator(0, SHUFFLE)
    while True:
        perm = gen.permutation(m)
        if not np.any(perm == np.arange(m)):
            return perm


def mixture_cdf(scales: np.ndarray):
    """CDF of ``s N`` with ``s`` drawn uniformly from ``scales``."""
    scales = np.asarray(scales, dtype=float)

    def cdf(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return stats.norm.cdf(x[:, None] / scales[None, :]).mean(axis=1)

    return cdf


def gradient_clt_test(run: EnsembleRun, t: float, eps_ladder, e=None, anchor=None, significance: float = 0.01,
                      threshold: float = 0.05, method: str = "mixture", pairing_seed: int | None = None) -> EnsembleStats:
    """Kolmogorov-Smirnov distance of ``eps^-H grad`` to ``c sigma(u_t(x)) N`` across members.

    ``method="mixture"`` compares with the exact mixture law given the
    members' own ``sigma(u_t(x))``; ``method="paired"`` draws one independent
    Gaussian per member and runs a two-sample test.  The verdict requires the
    distance at the smallest eps to be below ``threshold`` and the distances
    to be non-increasing toward small eps within the critical value.
    """
    grid, params = run.grid, run.params
    e = (1.0,) + (0.0,) * (grid.dim - 1) if e is None else e
    H = params.hurst
    c = c_alpha_gamma_d(params).value
    f = run.field_at(t)
    site = _anchor_index(grid, anchor)
    u_x = f[(slice(None),) + site]
    sig = np.abs(params.diffusion(u_x))
    if np.all(sig == 0):
        raise DegenerateTestError("sigma(u_t(x)) vanishes on the whole ensemble")
    m = run.members
    crit = float(stats.kstwo.ppf(1 - significance, m))
    eps_sorted = sorted(eps_ladder, reverse=True)
    dists, pvals, ratios = [], [], []
    if method == "paired":
        gen = Stream(run.seed if pairing_seed is None else pairing_seed, 0).generator(0, SHUFFLE + 100)
        reference = c * sig * gen.standard_normal(m)
    for eps in eps_sorted:
        g = gradient_field(f, grid, e, eps)[(slice(None),) + site] / eps**H
        if method == "mixture":
            res = stats.kstest(g, mixture_cdf(c * sig))
        elif method == "paired":
            res = stats.ks_2samp(g, reference)
        else:
            raise ConfigurationError(f"unknown method {method!r}")
        dists.append(float(res.statistic))
        pvals.append(float(res.pvalue))
        ratios.append(float(g.std(ddof=1) / (c * math.sqrt(np.mean(sig**2)))))
    trend_ok = all(b <= a + crit for a, b in zip(dists[:-1], dists[1:]))
    stat = EnsembleStats.from_values("gradient_clt", dists, extras={
        "eps": eps_sorted, "ks": dists, "pvalue": pvals, "critical_value": crit, "std_ratio": ratios,
        "trend_ok": trend_ok, "threshold": threshold, "method": method,
    })
    stat.passed = bool(dists[-1] < threshold and trend_ok)
    return stat


def clt_negative_control(run: EnsembleRun, t: float, eps: float, e=None, anchor=None,
                         shuffle_seed: int | None = None) -> EnsembleStats:
    """Standardized residuals ``g / (c sigma(u_t(x)))`` against N(0,1), paired and shuffled.

    Shuffling assigns each member another member's ``sigma`` (a derangement);
    the verdict is that the shuffled distance is strictly larger.
    """
    grid, params = run.grid, run.params
    e = (1.0,) + (0.0,) * (grid.dim - 1) if e is None else e
    c = c_alpha_gamma_d(params).value
    f = run.field_at(t)
    site = _anchor_index(grid, anchor)
    sig = np.abs(params.diffusion(f[(slice(None),) + site]))
    if np.any(sig == 0):
        raise DegenerateTestError("sigma(u_t(x)) vanishes for some member; residuals are undefined")
    g = gradient_field(f, grid, e, eps)[(slice(None),) + site] / eps**params.hurst
    perm = _derangement(run.members, Stream(run.seed if shuffle_seed is None else shuffle_seed, 0))
    paired = stats.kstest(g / (c * sig), "norm").statistic
    shuffled = stats.kstest(g / (c * sig[perm]), "norm").statistic
    stat = EnsembleStats.from_values("clt_negative_control", [paired, shuffled],
                                     extras={"paired": float(paired), "shuffled": float(shuffled), "eps": eps})
    stat.passed = bool(shuffled > paired)
    return stat


# ---------------------------------------------------------------------------
# law of the iterated logarithm


def lil_normalized_maxima(path: np.ndarray, spacing: float, anchors, eps_ladder, hurst: float, scale,
                          periodic: bool = True) -> np.ndarray:
    """``max_eps |path(x) - path(x - eps)| / (eps^H sqrt(2 log log(1/eps))) / scale`` per anchor.

    ``path`` is 1-D along the probe direction; ``scale`` is the per-anchor
    limit constant ``c |sigma(u_t(x))|``.
    """
    anchors = np.asarray(anchors, dtype=int)
    ratios = []
    for eps in eps_ladder:
        k = round(eps / spacing)
        if abs(k * spacing - eps) > GRID_TOL or k < 1:
            raise ConfigurationError(f"eps={eps} is not a positive multiple of the spacing")
        back = anchors - k
        if periodic:
            back %= path.size
        elif back.min() < 0:
            raise ConfigurationError("anchors too close to the path start for the largest eps")
        incr = np.abs(path[anchors] - path[back])
        ratios.append(incr / (eps**hurst * math.sqrt(2 * math.log(math.log(1 / eps)))))
    return np.max(ratios, axis=0) / np.asarray(scale, dtype=float)


def _check_lil_ladder(eps_ladder) -> list[float]:
    eps = sorted((float(x) for x in eps_ladder), reverse=True)
    if len(eps) < 6:
        raise ConfigurationError(f"LIL ladder needs at least 6 levels, got {len(eps)}")
    for a, b in zip(eps[:-1], eps[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ConfigurationError("LIL ladder must be dyadic")
    if eps[0] >= 1 / math.e:
        raise ConfigurationError("LIL ladder needs eps < 1/e so that log log(1/eps) > 0")
    return eps


def lil_verdict(normalized: np.ndarray, band=(0.3, 3.0), fraction: float = 0.9, name: str = "lil") -> EnsembleStats:
    inside = (normalized >= band[0]) & (normalized <= band[1])
    frac = float(inside.mean())
    stat = EnsembleStats.from_values(name, normalized, extras={
        "fraction_in_band": frac, "band": list(band), "required_fraction": fraction, "label": "QUALITATIVE",
    }, qualitative=True)
    stat.passed = frac >= fraction
    return stat


def lil_diagnostic(values: np.ndarray, params: ModelParams, grid: Grid, eps_ladder, anchors: int = 256,
                   e=None) -> EnsembleStats:
    """QUALITATIVE LIL band check on one recorded field.

    Uses the absolute increment, whose limsup obeys the same law; anchors are
    equally spaced sites and the transect runs along ``e`` (default: first axis).
    """
    eps = _check_lil_ladder(eps_ladder)
    e = (1.0,) + (0.0,) * (grid.dim - 1) if e is None else e
    axis = int(np.flatnonzero(np.abs(np.asarray(e)) == 1.0)[0]) if grid.dim > 1 else 0
    if grid.dim > 1 and not np.isclose(np.abs(e).sum(), 1.0):
        raise ConfigurationError("LIL transects must follow a lattice axis")
    u = np.asarray(values)
    sig = np.abs(params.diffusion(u))
    if np.all(sig == 0):
        raise DegenerateTestError("sigma vanishes identically; the normalized maximum is undefined")
    c = c_alpha_gamma_d(params).value
    line = np.moveaxis(u, axis, -1).reshape(-1, grid.n)[0]
    sline = np.moveaxis(sig, axis, -1).reshape(-1, grid.n)[0]
    idx = np.linspace(0, grid.n, anchors, endpoint=False).astype(int)
    if np.any(sline[idx] == 0):
        raise DegenerateTestError("sigma vanishes at an anchor")
    norm = lil_normalized_maxima(line, grid.spacing, idx, eps, params.hurst, c * sline[idx])
    return lil_verdict(norm)


def lil_fbm(hurst: float, scale: float, length: float, n: int, eps_ladder, anchors: int, stream: Stream) -> EnsembleStats:
    """Same band check on a directly sampled fBm path scaled by ``scale``."""
    from .fbm import sample_fbm

    eps = _check_lil_ladder(eps_ladder)
    x = np.linspace(0.0, length, n + 1)
    path = scale * sample_fbm(x, hurst, stream).values
    h = length / n
    start = round(max(eps) / h)
    idx = np.linspace(start, n, anchors, endpoint=False).astype(int)
    norm = lil_normalized_maxima(path, h, idx, eps, hurst, np.full(idx.size, scale), periodic=False)
    return lil_verdict(norm, name="lil_fbm")


# ---------------------------------------------------------------------------
# variations


def q_variation(values, q: float) -> np.ndarray | float:
    """``sum_i |f(x_{i+1}) - f(x_i)|^q`` along the last axis."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] < 2:
        raise ConfigurationError("q_variation needs n >= 1 increments")
    out = np.sum(np.abs(np.diff(v, axis=-1)) ** q, axis=-1)
    return float(out) if out.ndim == 0 else out


def weighted_variation(values, weights, q: float):
    """``sum_i w(x_i) |f(x_{i+1}) - f(x_i)|^q`` along the last axis."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)[..., :-1]
    return np.sum(w * np.abs(np.diff(v, axis=-1)) ** q, axis=-1)


def diagonal_transect(grid: Grid, interval, level: int) -> tuple[np.ndarray, tuple]:
    """Lattice indices of ``x_j = a_j (1, ..., 1)``, ``a_j = A1 + j (A2 - A1) / level``, wrapped on the torus."""
    a1, a2 = interval
    step = (a2 - a1) / level
    k = round(step / grid.spacing)
    if k < 1 or abs(k * grid.spacing - step) > GRID_TOL * max(1.0, step):
        raise ConfigurationError(
            f"level {level} on [{a1}, {a2}] needs steps of {step:g}, not a positive multiple of h={grid.spacing:g}"
        )
    if a2 - a1 >= grid.extent:
        raise ConfigurationError(f"interval [{a1}, {a2}] is longer than the period {grid.extent}")
    start = grid.site_index((a1,) * grid.dim)[0]
    along = (start + k * np.arange(level + 1)) % grid.n
    return along, tuple([along] * grid.dim)


def weighted_variation_test(run: EnsembleRun, t: float, interval, levels, phi: FunctionSpec | None = None,
                            threshold: float = 0.1) -> EnsembleStats:
    """Weighted ``1/H``-variation along the diagonal against the per-path limit.

    The limit ``c14 sqrt(d) int phi(u) |sigma(u)|^(1/H) da`` is integrated by
    the trapezoidal rule on every lattice point of the transect.  The verdict
    uses the median absolute relative error at the finest level.
    """
    grid, params = run.grid, run.params
    phi = FunctionSpec.constant(1.0) if phi is None else phi
    q = 1.0 / params.hurst
    f = run.field_at(t)
    c14v = c14_report(params).value
    fine_level = round((interval[1] - interval[0]) / grid.spacing)
    _, fine = diagonal_transect(grid, interval, fine_level)
    uf = f[(slice(None),) + fine]
    integrand = phi(uf) * np.abs(params.diffusion(uf)) ** q
    limit = c14v * math.sqrt(grid.dim) * trapezoid(integrand, dx=(interval[1] - interval[0]) / fine_level, axis=-1)
    per_level, medians = [], []
    for level in sorted(levels):
        _, idx = diagonal_transect(grid, interval, level)
        path = f[(slice(None),) + idx]
        v = weighted_variation(path, phi(path), q)
        rel = v / limit - 1
        per_level.append(float(np.mean(v)))
        medians.append(float(np.median(np.abs(rel))))
    stat = EnsembleStats.from_values("weighted_variation", rel, extras={
        "levels": sorted(levels), "mean_variation": per_level, "median_abs_rel_error": medians,
        "mean_limit": float(np.mean(limit)), "threshold": threshold,
    })
    stat.passed = medians[-1] < threshold
    return stat


def fbm_variation_check(params: ModelParams, interval, level: int, samples: int, stream: Stream,
                        threshold: float = 0.05) -> EnsembleStats:
    """Variation of ``c_agd`` times fBm on the interval against ``c14 (A2 - A1) sqrt(d)``."""
    c = c_alpha_gamma_d(params).value
    length = (interval[1] - interval[0]) * math.sqrt(params.dim)
    v = fbm_variation_oracle(params.hurst, level, stream, size=samples, scale=c, length=length)
    target = c14_report(params).value * length
    stat = EnsembleStats.from_values("fbm_variation", v, extras={"target": target})
    stat.extras["rel_error"] = stat.mean / target - 1
    stat.passed = abs(stat.extras["rel_error"]) < threshold
    return stat


# ---------------------------------------------------------------------------
# localization


def _gradient_symbol(grid: Grid, e, eps: float) -> np.ndarray:
    shift = np.asarray(grid.shift_index(eps * np.atleast_1d(np.asarray(e, dtype=float)))) * grid.spacing
    phase = sum(k * s for k, s in zip(grid.axis_frequencies, shift))
    return 1 - np.exp(-1j * phase)


def _step_transfer(grid: Grid, params: ModelParams, dt: float, scheme: str, t_steps: int, j: int) -> np.ndarray:
    """Transform-domain weight of the step-``j`` noise in the linear solution after ``t_steps`` steps."""
    lam = grid.wavenumbers**params.alpha
    return np.exp(-lam * dt * (t_steps - j - 1)) * noise_filter(grid, params.alpha, dt, scheme)


def _window_steps(t_steps: int, dt: float, span: float) -> int:
    """First step whose slab starts inside ``[t - span, t]``."""
    return max(0, int(math.ceil(t_steps - span / dt - GRID_TOL)))


def localization_decay(run: EnsembleRun, loc: LocalizationConfig, e=None, slope_margin: float = 0.1) -> EnsembleStats:
    """L2 error of the box-localized noise integral against the gradient of the linear solution.

    For each beta the localized integral keeps noise cells with start time in
    ``[t - beta eps^alpha, t]`` and periodic distance at most ``eps delta`` from
    ``x``; all sites act as anchors.  The same noise drives both integrals.
    """
    grid, params, cfg = run.grid, run.params, run.cfg
    if not params.is_linear or not params.init.kind == "zero":
        raise ConfigurationError("localization needs the linear equation with zero initial data")
    loc.validate(grid, params)
    e = (1.0,) + (0.0,) * (grid.dim - 1) if e is None else e
    t, _ = loc.anchor
    t_steps = round(t / cfg.dt)
    sigma0 = float(params.diffusion(np.zeros(1))[0])
    eps = loc.eps
    grad_sym = _gradient_symbol(grid, e, eps)
    dist = grid.lag_distances()
    deltas = loc.deltas(params.hurst)
    masks = [dist <= eps * d + GRID_TOL for d in deltas]
    firsts = [_window_steps(t_steps, cfg.dt, b * eps**params.alpha) for b in loc.beta_ladder]
    loc_hat = np.zeros((len(deltas), run.members) + grid.wavenumbers.shape, dtype=complex)
    for j in range(min(firsts), t_steps):
        w_hat = grid.forward(run.noise_steps(j))
        kern = grid.inverse(sigma0 * _step_transfer(grid, params, cfg.dt, cfg.scheme, t_steps, j) * grad_sym)
        for b, (mask, first) in enumerate(zip(masks, firsts)):
            if j >= first:
                loc_hat[b] += grid.forward(np.where(mask, kern, 0.0)) * w_hat
    full = gradient_field(run.field_at(t), grid, e, eps)
    ref = math.sqrt(np.mean(full**2))
    errors, per_member = [], []
    for b in range(len(deltas)):
        diff = full - grid.inverse(loc_hat[b])
        per_member.append(np.mean(diff**2, axis=grid.axes))
        errors.append(math.sqrt(per_member[-1].mean()))
    betas = np.array(loc.beta_ladder)
    slope = float(np.polyfit(np.log(betas), np.log(errors), 1)[0])
    bound = -(grid.dim + 2 - params.alpha - params.gamma) / (2 * params.alpha) + slope_margin
    stat = EnsembleStats.from_values("localization", errors, extras={
        "beta": betas, "delta": deltas, "l2_error": errors, "relative_error": np.array(errors) / ref,
        "gradient_l2": ref, "slope": slope, "slope_bound": bound, "eps": eps,
    })
    stat.passed = slope <= bound
    return stat


def localization_error_exact(grid: Grid, params: ModelParams, dt: float, scheme: str, t: float, eps: float,
                             beta: float, e=None, sigma: float = 1.0) -> float:
    """Exact L2 norm of the localization error for the linear scheme (no sampling)."""
    e = (1.0,) + (0.0,) * (grid.dim - 1) if e is None else e
    t_steps = round(t / dt)
    s = spectral_weights(grid, params.gamma)
    grad_sym = _gradient_symbol(grid, e, eps)
    mask = grid.lag_distances() <= eps * delta_rule(beta, params.hurst) + GRID_TOL
    first = _window_steps(t_steps, dt, beta * eps**params.alpha)
    total = np.zeros(grid.wavenumbers.shape)
    for j in range(t_steps):
        sym = sigma * _step_transfer(grid, params, dt, scheme, t_steps, j) * grad_sym
        if j >= first:
            kern = grid.inverse(sym)
            sym = grid.forward(np.where(mask, 0.0, kern))
        total += np.abs(sym) ** 2
    var = float(grid.inverse(s * dt * total).flat[0] * grid.size)
    return math.sqrt(var)
