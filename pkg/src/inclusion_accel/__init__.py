"""First-order solvers for constrained monotone and negatively comonotone inclusions."""
from .core import IterateRecord, RunReport, SolverConfig, Trace, fit_rate_exponent
from .kernels import BACKEND

__all__ = ["BACKEND", "IterateRecord", "RunReport", "SolverConfig", "Trace", "fit_rate_exponent"]
__version__ = "0.1.0"
