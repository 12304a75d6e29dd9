"""Classical emulation toolkit for quadratic ODEs forced by a mean-reverting
Gaussian process: exact forcing simulation, tensor-power lifts, kernel-weighted
Hamiltonian-combination solvers, Monte-Carlo time-ordered series engines, and
the matching probabilistic error and resource calculators."""

from . import carleman, complexity, config, dyson, lchs, numerics, ou, quadratic, tail_bounds
from .numerics import LyapunovMetric, identity_metric, log_norm_P, lyapunov_solve, matrix_exp
from .ou import OUPath, OUProcess, sample_exact
from .quadratic import QuadraticSystem

__all__ = [
    "carleman", "complexity", "config", "dyson", "lchs", "numerics", "ou",
    "quadratic", "tail_bounds",
    "LyapunovMetric", "identity_metric", "log_norm_P", "lyapunov_solve",
    "matrix_exp", "OUPath", "OUProcess", "sample_exact", "QuadraticSystem",
]

__version__ = "0.1.0"
