"""Model parameters: orders, drift and diffusion coefficients, initial data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigurationError, ParameterDomainError


def check_admissible(alpha: float, gamma: float, dim: int) -> None:
    """Raise if ``(alpha, gamma, dim)`` violates 1 < alpha <= 2, (d - alpha)_+ < gamma < d."""
    if int(dim) != dim or dim < 1:
        raise ParameterDomainError(f"dim must be a positive integer, got {dim!r}")
    if not 1.0 < alpha <= 2.0:
        raise ParameterDomainError(f"need 1 < alpha <= 2, got alpha={alpha}")
    lower = max(dim - alpha, 0.0)
    if not gamma > lower:
        raise ParameterDomainError(
            f"need gamma > (d - alpha)_+ = {lower:g}, got gamma={gamma} (d={dim}, alpha={alpha})"
        )
    if not gamma < dim:
        raise ParameterDomainError(f"need gamma < d = {dim}, got gamma={gamma}")


_FUNCTION_KINDS = {
    "zero": (),
    "constant": ("value",),
    "linear": ("slope", "intercept"),
    "sine": ("offset", "amplitude", "frequency"),
    "table": ("x", "y"),
}


@dataclass(frozen=True)
class FunctionSpec:
    """A scalar coefficient function ``R -> R`` given by name and parameters.

    ``sine`` is ``offset + amplitude * sin(frequency * u)``; ``table`` is
    piecewise-linear through the knots with constant extrapolation.
    """

    kind: str = "zero"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FUNCTION_KINDS:
            raise ConfigurationError(
                f"unknown function kind {self.kind!r}; expected one of {sorted(_FUNCTION_KINDS)}"
            )
        allowed = set(_FUNCTION_KINDS[self.kind])
        extra = set(self.params) - allowed
        if extra:
            raise ConfigurationError(f"unknown parameters {sorted(extra)} for function kind {self.kind!r}")
        if self.kind == "table":
            x = np.asarray(self.params.get("x", ()), dtype=float)
            y = np.asarray(self.params.get("y", ()), dtype=float)
            if x.ndim != 1 or x.size < 2 or x.shape != y.shape:
                raise ConfigurationError("table needs matching 'x' and 'y' lists with at least two knots")
            if np.any(np.diff(x) <= 0):
                raise ConfigurationError("table knots 'x' must be strictly increasing")

    @classmethod
    def zero(cls) -> "FunctionSpec":
        return cls("zero")

    @classmethod
    def constant(cls, value: float) -> "FunctionSpec":
        return cls("constant", {"value": float(value)})

    @classmethod
    def linear(cls, slope: float, intercept: float = 0.0) -> "FunctionSpec":
        return cls("linear", {"slope": float(slope), "intercept": float(intercept)})

    @classmethod
    def sine(cls, offset: float, amplitude: float, frequency: float = 1.0) -> "FunctionSpec":
        return cls("sine", {"offset": float(offset), "amplitude": float(amplitude), "frequency": float(frequency)})

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "constant" and self.params.get("value", 0.0) == 0.0)

    @property
    def is_constant(self) -> bool:
        return self.kind in ("zero", "constant")

    @property
    def lipschitz(self) -> float:
        p = self.params
        if self.kind in ("zero", "constant"):
            return 0.0
        if self.kind == "linear":
            return abs(p.get("slope", 0.0))
        if self.kind == "sine":
            return abs(p.get("amplitude", 0.0) * p.get("frequency", 1.0))
        x = np.asarray(p["x"], dtype=float)
        y = np.asarray(p["y"], dtype=float)
        return float(np.max(np.abs(np.diff(y) / np.diff(x))))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "constant":
            return np.full_like(u, p.get("value", 0.0))
        if self.kind == "linear":
            return p.get("slope", 0.0) * u + p.get("intercept", 0.0)
        if self.kind == "sine":
            return p.get("offset", 0.0) + p.get("amplitude", 0.0) * np.sin(p.get("frequency", 1.0) * u)
        return np.interp(u, p["x"], p["y"])

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **{k: self.params[k] for k in sorted(self.params)}}

    @classmethod
    def from_dict(cls, data: dict[str, Any] | str) -> "FunctionSpec":
        if isinstance(data, str):
            return cls(data)
        data = dict(data)
        kind = data.pop("kind", "zero")
        return cls(kind, data)


_INIT_KINDS = {
    "zero": (),
    "constant": ("value",),
    "bump": ("amplitude", "width"),
    "holder": ("amplitude", "smoothing"),
}


@dataclass(frozen=True)
class InitSpec:
    """Initial data ``u_0``.

    ``holder`` is a random periodic Gaussian field whose increments scale like
    ``|h|^eta0`` (``eta0`` is ``ModelParams.init_holder``), lightly smoothed by
    a Gaussian filter of width ``smoothing``.
    """

    kind: str = "zero"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _INIT_KINDS:
            raise ConfigurationError(f"unknown init kind {self.kind!r}; expected one of {sorted(_INIT_KINDS)}")
        extra = set(self.params) - set(_INIT_KINDS[self.kind])
        if extra:
            raise ConfigurationError(f"unknown parameters {sorted(extra)} for init kind {self.kind!r}")

    @property
    def is_random(self) -> bool:
        return self.kind == "holder"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **{k: self.params[k] for k in sorted(self.params)}}

    @classmethod
    def from_dict(cls, data: dict[str, Any] | str) -> "InitSpec":
        if isinstance(data, str):
            return cls(data)
        data = dict(data)
        kind = data.pop("kind", "zero")
        return cls(kind, data)


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    gamma: float
    dim: int = 1
    drift: FunctionSpec = field(default_factory=FunctionSpec.zero)
    diffusion: FunctionSpec = field(default_factory=lambda: FunctionSpec.constant(1.0))
    init: InitSpec = field(default_factory=InitSpec)
    init_holder: float = 1.0
    lip_drift: float | None = None
    lip_diffusion: float | None = None

    def __post_init__(self):
        check_admissible(self.alpha, self.gamma, self.dim)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "dim", int(self.dim))
        for name, spec in (("lip_drift", self.drift), ("lip_diffusion", self.diffusion)):
            value = getattr(self, name)
            if value is None:
                value = spec.lipschitz
            value = float(value)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterDomainError(f"{name} must be finite and nonnegative, got {value}")
            if value < spec.lipschitz - 1e-12:
                raise ParameterDomainError(
                    f"{name}={value} is below the Lipschitz constant {spec.lipschitz} of the given function"
                )
            object.__setattr__(self, name, value)
        low = 2 * self.hurst / self.alpha
        if not low < self.init_holder <= 1.0:
            raise ParameterDomainError(
                f"need (alpha - d + gamma)/alpha = {low:g} < init_holder <= 1, got {self.init_holder}"
            )

    @property
    def hurst(self) -> float:
        return (self.alpha - self.dim + self.gamma) / 2.0

    @property
    def is_linear(self) -> bool:
        """Additive noise and no drift: the equation for ``Z`` (up to initial data)."""
        return self.drift.is_zero and self.diffusion.is_constant

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "dim": self.dim,
            "drift": self.drift.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "init": self.init.to_dict(),
            "init_holder": self.init_holder,
            "lip_drift": self.lip_drift,
            "lip_diffusion": self.lip_diffusion,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelParams":
        data = dict(data)
        unknown = set(data) - {
            "alpha", "gamma", "dim", "drift", "diffusion", "init", "init_holder", "lip_drift", "lip_diffusion",
        }
        if unknown:
            raise ConfigurationError(f"unknown model keys {sorted(unknown)}")
        for key in ("alpha", "gamma"):
            if key not in data:
                raise ConfigurationError(f"model.{key} is required")
        if "drift" in data:
            data["drift"] = FunctionSpec.from_dict(data["drift"])
        if "diffusion" in data:
            data["diffusion"] = FunctionSpec.from_dict(data["diffusion"])
        if "init" in data:
            data["init"] = InitSpec.from_dict(data["init"])
        return cls(**data)
