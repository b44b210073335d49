"""Spectral simulation and verification toolkit for the fractional stochastic heat equation."""
from .constants import ConstantReport, all_constants, c_alpha_gamma_d, linear_variance
from .errors import ConfigurationError, FracSHEError, NumericError
from .grid import Grid, KernelSlice, green_kernel, kernel_bounds_check, make_grid
from .model import FunctionSpec, InitSpec, ModelParams
from .rng import Stream

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ConstantReport", "FracSHEError", "FunctionSpec", "Grid", "InitSpec", "KernelSlice",
    "ModelParams", "NumericError", "Stream", "all_constants", "c_alpha_gamma_d", "green_kernel",
    "kernel_bounds_check", "linear_variance", "make_grid", "__version__",
]
