"""Shared numeric types, run configuration and the per-iteration record schema."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: default relative tolerance, applied as ``RTOL * (1 + magnitude)``
RTOL = 1e-9

ALGORITHMS = ("EAG", "AS", "EG")


class InclusionError(Exception):
    """Base class for all errors raised by this package."""


class DimMismatch(InclusionError, ValueError):
    pass


class NonFiniteIterate(InclusionError, FloatingPointError):
    """An iterate or operator value became NaN/Inf."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


class StepSizeViolation(InclusionError, ValueError):
    pass


class PreconditionViolation(InclusionError, ValueError):
    pass


class InsufficientData(InclusionError, ValueError):
    pass


class DegenerateResidual(InclusionError, ValueError):
    """Raised when a fitted residual is exactly zero; the slope is reported as -inf."""

    exponent = -math.inf


def as_vector(z, dim=None, name="z"):
    """Coerce ``z`` to a finite 1-D float64 array, optionally checking its length."""
    arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if arr.ndim != 1:
        raise DimMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimMismatch(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteIterate(f"{name} contains non-finite entries")
    return arr


def check_same_dim(*vectors):
    dims = {np.shape(v)[-1] for v in vectors}
    if len(dims) > 1:
        raise DimMismatch(f"dimension mismatch: {sorted(dims)}")


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "EAG"
    eta: float = 0.1
    delta: float = 0.0
    rho: float = 0.0
    max_iters: int = 1000
    target_residual: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise StepSizeViolation(f"eta must be positive and finite, got {self.eta}")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.rho > 0:
            raise ValueError("rho must be nonpositive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.target_residual < 0:
            raise ValueError("target_residual must be nonnegative")
        if self.algorithm == "AS" and self.eta <= -2.0 * self.rho:
            raise StepSizeViolation(
                f"AS requires eta > -2*rho; got eta={self.eta}, rho={self.rho}"
            )

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class IterateRecord:
    k: int
    cert_residual: float
    natural_residual: float
    potential: float
    descent_slack: Optional[float] = None
    distance_to_solution: Optional[float] = None


@dataclass
class Trace:
    """Raw iterates of a run.

    Row ``k`` of ``z``, ``fz`` and ``c`` holds z_k, F(z_k) and the certificate c_k
    (row 0 of ``c`` is zero).  Row ``k`` of ``half``/``fhalf`` holds z_{k+1/2} and
    F(z_{k+1/2}), so they have one row fewer than ``z``.
    """

    algorithm: str
    eta: float
    z: np.ndarray
    fz: np.ndarray
    c: np.ndarray
    half: np.ndarray
    fhalf: np.ndarray
    delta: float = 0.0
    rho: float = 0.0

    @property
    def iterations(self):
        return self.z.shape[0] - 1

    @property
    def z0(self):
        return self.z[0]

    def cert_residuals(self):
        return np.linalg.norm(self.fz + self.c, axis=1)


@dataclass
class RunReport:
    records: list
    fitted_rate_exponent: float
    envelope_ok: Optional[bool]
    envelope_margin: float
    config_echo: SolverConfig
    envelope_status: str = "not assessable"
    trace: Optional[Trace] = field(default=None, repr=False)
    potential_trace: object = field(default=None, repr=False)
    aborted: Optional[str] = None

    def to_dict(self):
        return {
            "config": self.config_echo.to_dict(),
            "iterations": len(self.records),
            "fitted_rate_exponent": _json_float(self.fitted_rate_exponent),
            "envelope_ok": self.envelope_ok,
            "envelope_status": self.envelope_status,
            "envelope_margin": _json_float(self.envelope_margin),
            "final_cert_residual": self.records[-1].cert_residual if self.records else None,
            "aborted": self.aborted,
        }


def _json_float(x):
    if x is None:
        return None
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def fit_rate_exponent(records: Sequence[IterateRecord], k_min: int = 1) -> float:
    """Least-squares slope of log(cert_residual) against log(k) over ``k >= k_min``."""
    rows = [r for r in records if r.k >= k_min and r.k >= 1]
    if any(r.cert_residual == 0.0 for r in rows):
        raise DegenerateResidual("zero residual in fitting window")
    rows = [r for r in rows if r.cert_residual > 0.0]
    if len(rows) < 10:
        raise InsufficientData(f"need at least 10 records with k >= {k_min}, got {len(rows)}")
    logk = np.log([r.k for r in rows])
    logr = np.log([r.cert_residual for r in rows])
    dx = logk - logk.mean()
    dy = logr - logr.mean()
    return float(dx @ dy / (dx @ dx))
