"""Potential functions, descent checks, rate envelopes and the auxiliary identities.

Everything here is a pure function of a finished trace.  Verdict-style checks
return objects describing what held and what did not; they do not raise on a
failed inequality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DimMismatch, InclusionError, PreconditionViolation, Trace, check_same_dim

DESCENT_RTOL = 1e-8
IDENTITY_RTOL = 1e-9


class DegenerateR(InclusionError, ValueError):
    pass


# ---------------------------------------------------------------- potentials


def potential_v(k, eta, Fz, c, z, z0, delta=0.0) -> float:
    """(k(k+1)/2)||eta(F+c)||^2 + k<eta(F+c), z - z0>, with k shifted by ``delta``."""
    if k < 1:
        raise ValueError("potential V is defined for k >= 1")
    check_same_dim(Fz, c, z, z0)
    g = eta * (np.asarray(Fz, dtype=np.float64) + np.asarray(c, dtype=np.float64))
    q = k + delta
    return float(q * (q + 1) / 2.0 * (g @ g) + q * (g @ (np.asarray(z) - np.asarray(z0))))


def potential_u(k, eta, rho, Fz, c, z, z0) -> float:
    if k < 1:
        raise ValueError("potential U is defined for k >= 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    check_same_dim(Fz, c, z, z0)
    g = eta * (np.asarray(Fz, dtype=np.float64) + np.asarray(c, dtype=np.float64))
    r = rho / eta
    coef = k * k / 2.0 * (1.0 + 2.0 * r) - r * k
    return float(coef * (g @ g) + k * (g @ (np.asarray(z) - np.asarray(z0))))


def _scaled_rows(trace: Trace):
    g = trace.eta * (trace.fz[1:] + trace.c[1:])
    k = np.arange(1, trace.iterations + 1, dtype=np.float64)
    sq = np.einsum("ij,ij->i", g, g)
    inner = np.einsum("ij,ij->i", g, trace.z[1:] - trace.z0)
    return k, sq, inner


def potential_v_trace(trace: Trace) -> np.ndarray:
    """V_1 .. V_T of an EAG trace (vectorised ``potential_v``)."""
    k, sq, inner = _scaled_rows(trace)
    q = k + trace.delta
    return q * (q + 1) / 2.0 * sq + q * inner


def potential_u_trace(trace: Trace) -> np.ndarray:
    k, sq, inner = _scaled_rows(trace)
    r = trace.rho / trace.eta
    return (k * k / 2.0 * (1.0 + 2.0 * r) - r * k) * sq + k * inner


# ---------------------------------------------------------------- descent


@dataclass
class PotentialTrace:
    """Per-transition descent bookkeeping; entry i covers the step k -> k+1 with k = i+1."""

    kind: str
    k: np.ndarray
    potential: np.ndarray
    allowed_increase: np.ndarray
    observed_increase: np.ndarray
    rtol: float = DESCENT_RTOL

    @property
    def slack(self):
        return self.allowed_increase - self.observed_increase

    @property
    def violations(self) -> np.ndarray:
        """k values whose transition k -> k+1 exceeds the allowance beyond tolerance."""
        tol = self.rtol * (1.0 + np.abs(self.potential[:-1]))
        bad = self.observed_increase > self.allowed_increase + tol
        return self.k[:-1][bad]

    @property
    def ok(self):
        return self.violations.size == 0

    @property
    def values(self):
        return list(zip(self.k[:-1].tolist(), self.potential[:-1].tolist(),
                        self.allowed_increase.tolist(), self.observed_increase.tolist()))


def check_v_descent(trace: Trace, eta, L, rtol=DESCENT_RTOL) -> PotentialTrace:
    """Compare V_{k+1} - V_k against (p/(1-p))||eta(F(z_{k+1})+c_{k+1})||^2, p = (eta L)^2.

    The guarantee needs 0 < eta L < 1.  Larger steps are still evaluated (the
    allowance turns negative) so that illegal runs show up as violations.
    """
    p = (eta * L) ** 2
    if not p > 0 or p == 1.0:
        raise PreconditionViolation("V-descent allowance is undefined at eta*L in {0, 1}")
    V = potential_v_trace(trace)
    _, sq, _ = _scaled_rows(trace)
    allowed = p / (1.0 - p) * sq[1:]
    return PotentialTrace("V", np.arange(1, V.size + 1), V, allowed, np.diff(V), rtol)


def check_u_descent(trace: Trace, eta, rho, rtol=DESCENT_RTOL) -> PotentialTrace:
    if eta <= -2.0 * rho:
        raise PreconditionViolation("U-descent needs eta > -2*rho")
    U = potential_u_trace(trace)
    return PotentialTrace("U", np.arange(1, U.size + 1), U, np.zeros(max(U.size - 1, 0)),
                          np.diff(U), rtol)


def v_lower_bound_gaps(trace: Trace, z_star) -> np.ndarray:
    """V_k - [(k(k+1)/4)||eta(F+c)||^2 - ||z0 - z*||^2]; nonnegative on monotone runs."""
    k, sq, _ = _scaled_rows(trace)
    V = potential_v_trace(trace)
    d2 = float(np.sum((trace.z0 - np.asarray(z_star)) ** 2))
    return V - (k * (k + 1) / 4.0 * sq - d2)


# ---------------------------------------------------------------- envelopes


def envelope_eag_unconstrained(T, eta, L, D):
    """Squared-residual bound 4(1+eta L)^2 / ((eta L)^2 (1-3(eta L)^2)) * D^2 L^2 / T^2."""
    x = eta * L
    if not 0 < x < 1 / math.sqrt(3):
        raise PreconditionViolation("EAG envelope needs 0 < eta*L < 1/sqrt(3)")
    T = np.asarray(T, dtype=np.float64)
    return 4.0 * (1.0 + x) ** 2 / (x * x * (1.0 - 3.0 * x * x)) * D * D * L * L / T**2


def envelope_eag_constrained(T, eta, L, D):
    x = eta * L
    if not 0 < x < 1 / math.sqrt(3):
        raise PreconditionViolation("EAG envelope needs 0 < eta*L < 1/sqrt(3)")
    T = np.asarray(T, dtype=np.float64)
    return 44.0 / (x * x * (1.0 - 3.0 * x * x)) * D * D * L * L / T**2


def envelope_as(T, eta, rho, L, H0):
    """4/((eta+2 rho)^2 L^2) * H0^2 L^2 / T^2."""
    if not (-1.0 / (2.0 * L) < rho <= 0.0):
        raise PreconditionViolation("AS envelope needs rho in (-1/(2L), 0]")
    if not (max(0.0, -2.0 * rho) < eta < 1.0 / L):
        raise PreconditionViolation("AS envelope needs eta in (max(0,-2 rho), 1/L)")
    T = np.asarray(T, dtype=np.float64)
    s = eta + 2.0 * rho
    return 4.0 / (s * s * L * L) * H0 * H0 * L * L / T**2


def h0_squared(z0, z1, z_star):
    return 4.0 * float(np.sum((np.asarray(z1) - z0) ** 2)) + float(np.sum((np.asarray(z0) - z_star) ** 2))


def h0_squared_surrogate(r_tan_z0, L, z0, z_star):
    """Upper bound on H0^2 computable before the first step."""
    return 4.0 * r_tan_z0**2 / L**2 + float(np.sum((np.asarray(z0) - z_star) ** 2))


def v1_bound(eta, L, dist0):
    x = eta * L
    return (1 + x + x * x) * (2 + 2 * x + x * x) / (1 - x * x) * dist0**2


def v1_bound_unconstrained(eta, L, dist0):
    """Tighter first-step bound (eta^2 L^2 + 2 eta L)||z0 - z*||^2, valid when Z is the whole space."""
    x = eta * L
    return (x * x + 2 * x) * dist0**2


def u1_bound(eta, L, step1):
    x = eta * L
    return (1 + x) * (3 + x) / 2.0 * step1**2


@dataclass
class EnvelopeVerdict:
    status: str
    ok: Optional[bool]
    margin: float = math.nan
    bounds: Optional[np.ndarray] = field(default=None, repr=False)
    residuals: Optional[np.ndarray] = field(default=None, repr=False)


def envelope_series(problem, config, trace: Trace):
    """Per-k squared residual and squared bound, or a reason the envelope does not apply."""
    from .operators import ResolventKind

    if problem.z_star is None:
        return "not assessable: no known solution", None, None
    k = np.arange(1, trace.iterations + 1)
    res2 = np.sum((trace.fz[1:] + trace.c[1:]) ** 2, axis=1)
    L = problem.L
    if config.algorithm == "EAG":
        if config.delta != 0:
            return "not assessable: no envelope for delta > 0", None, None
        if not config.eta * L < 1 / math.sqrt(3):
            return "not assessable: eta*L >= 1/sqrt(3)", None, None
        D = float(np.linalg.norm(trace.z0 - problem.z_star))
        if problem.A.kind is ResolventKind.ZERO:
            return "ok", res2, envelope_eag_unconstrained(k, config.eta, L, D)
        return "ok", res2, envelope_eag_constrained(k, config.eta, L, D)
    if config.algorithm == "AS":
        try:
            H0 = math.sqrt(h0_squared(trace.z0, trace.z[1], problem.z_star))
            return "ok", res2, envelope_as(k, config.eta, config.rho, L, H0)
        except PreconditionViolation as exc:
            return f"not assessable: {exc}", None, None
    return "not assessable: no last-iterate envelope for EG", None, None


def envelope_verdict(problem, config, trace: Trace, rtol=1e-9) -> EnvelopeVerdict:
    status, res2, bounds = envelope_series(problem, config, trace)
    if bounds is None:
        return EnvelopeVerdict(status, None)
    ok = bool(np.all(res2 <= bounds * (1 + rtol)))
    margin = float(np.min(1.0 - np.sqrt(res2 / bounds))) if bounds.size else math.inf
    return EnvelopeVerdict("ok" if ok else "violated", ok, margin, bounds, res2)


# ---------------------------------------------------------------- identities

_EAG_COEFS = ("v1_sq", "v1_in", "v3_sq", "v3_in", "lip", "mon", "prox_half", "cone3", "cone1",
              "r_sq", "r_y", "r_in")
_AS_COEFS = ("u1_sq", "u1_in", "u3_sq", "u3_in", "lip", "comono", "rhs")


def _ip(a, b):
    return float(np.dot(a, b))


def _eag_identity_terms(x0, x1, x2, x3, y1, y2, y3, u1, p, q, perturb=None):
    w = dict.fromkeys(_EAG_COEFS, 1.0)
    if perturb:
        for name, eps in perturb.items():
            w[name] += eps
    u3 = x1 - y2 + (x0 - x1) / (q + 1) - x3
    qq = q * (q + 1)
    lhs = [
        w["v1_sq"] * qq / 2 * _ip(y1 + u1, y1 + u1),
        w["v1_in"] * q * _ip(y1 + u1, x1 - x0),
        -w["v3_sq"] * (q + 1) * (q + 2) / 2 * _ip(y3 + u3, y3 + u3),
        -w["v3_in"] * (q + 1) * _ip(y3 + u3, x3 - x0),
        -w["lip"] * qq / (2 * p) * (p * _ip(x2 - x3, x2 - x3) - _ip(y2 - y3, y2 - y3)),
        -w["mon"] * qq * _ip(y3 - y1, x3 - x1),
        -w["prox_half"] * qq * _ip(x1 - y1 - x2 + (x0 - x1) / (q + 1), x2 - x3),
        -w["cone3"] * qq * _ip(u3, x3 - x1),
        -w["cone1"] * qq * _ip(u1, x1 - x2),
    ]
    r = x2 - x1 + y1 + u1 + (x1 - x0) / (q + 1)
    rhs = [
        w["r_sq"] * qq / 2 * _ip(r, r),
        w["r_y"] * (1 - p) * qq / (2 * p) * _ip(y2 - y3, y2 - y3),
        w["r_in"] * (q + 1) * _ip(y2 - y3, y3 + u3),
    ]
    return lhs, rhs


def _as_identity_terms(x0, x1, x2, x3, y1, y2, y3, p, q, r, perturb=None):
    w = dict.fromkeys(_AS_COEFS, 1.0)
    if perturb:
        for name, eps in perturb.items():
            w[name] += eps
    s = q / (q + 1) * (1 + 2 * r)
    u1 = (x1 + (x0 - x1) / (q + 1) - s * y1 - x2) / s
    u3 = x1 + (x0 - x1) / (q + 1) - y2 - 2 * r * q / (q + 1) * (y1 + u1) - x3
    g1, g3 = y1 + u1, y3 + u3
    lhs = [
        w["u1_sq"] * (q * q / 2 * (1 + 2 * r) - r * q) * _ip(g1, g1),
        w["u1_in"] * q * _ip(g1, x1 - x0),
        -w["u3_sq"] * ((q + 1) ** 2 / 2 * (1 + 2 * r) - r * (q + 1)) * _ip(g3, g3),
        -w["u3_in"] * (q + 1) * _ip(g3, x3 - x0),
        -w["lip"] * (q + 1) ** 2 / 2 * (p * _ip(x2 - x3, x2 - x3) - _ip(y2 - y3, y2 - y3)),
        -w["comono"] * q * (q + 1) * (_ip(g3 - g1, x3 - x1) - r * _ip(g3 - g1, g3 - g1)),
    ]
    rhs = [w["rhs"] * (1 - p) * (q + 1) ** 2 / 2 * _ip(x2 - x3, x2 - x3)]
    return lhs, rhs


def _relative(lhs, rhs):
    scale = 1.0 + max(abs(t) for t in lhs + rhs)
    return abs(math.fsum(lhs) - math.fsum(rhs)) / scale


def _vectors(*vs):
    arrs = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vs]
    if len({a.shape for a in arrs}) != 1:
        raise DimMismatch("identity vectors must share one shape")
    return arrs


def verify_identity_eag(x0, x1, x2, x3, y1, y2, y3, u1, p, q, perturb=None) -> float:
    """Relative imbalance of the EAG descent identity, with u3 derived from its constraint.

    Returns ``|LHS - RHS| / (1 + largest |term|)``.  ``perturb`` maps coefficient
    names to additive perturbations (used for mutation testing).
    """
    if not (p > 0 and q > 0):
        raise ValueError("identity needs p > 0 and q > 0")
    vs = _vectors(x0, x1, x2, x3, y1, y2, y3, u1)
    return _relative(*_eag_identity_terms(*vs, p, q, perturb))


def verify_identity_as(x0, x1, x2, x3, y1, y2, y3, p, q, r, perturb=None) -> float:
    """Relative imbalance of the AS descent identity; u1 and u3 come from their constraints."""
    if abs(1.0 + 2.0 * r) < 1e-12:
        raise DegenerateR("identity needs 1 + 2r != 0")
    if not (p > 0 and q > 0):
        raise ValueError("identity needs p > 0 and q > 0")
    vs = _vectors(x0, x1, x2, x3, y1, y2, y3)
    return _relative(*_as_identity_terms(*vs, p, q, r, perturb))


def identity_residuals_from_trace(trace: Trace, L) -> np.ndarray:
    """Identity imbalance at every transition k -> k+1 (k >= 1) of an EAG or AS trace."""
    eta = trace.eta
    p = (eta * L) ** 2
    out = []
    for k in range(1, trace.iterations):
        x0, x1, x2, x3 = trace.z0, trace.z[k], trace.half[k], trace.z[k + 1]
        y1, y2, y3 = eta * trace.fz[k], eta * trace.fhalf[k], eta * trace.fz[k + 1]
        if trace.algorithm == "AS":
            out.append(verify_identity_as(x0, x1, x2, x3, y1, y2, y3, p, k, trace.rho / eta))
        else:
            out.append(verify_identity_eag(x0, x1, x2, x3, y1, y2, y3, eta * trace.c[k], p,
                                           k + trace.delta))
    return np.array(out)


# ---------------------------------------------------------------- sequence bound


@dataclass
class SequenceVerdict:
    hypothesis_holds: bool
    conclusion_holds: Optional[bool]
    first_hypothesis_failure: Optional[int] = None
    first_conclusion_failure: Optional[int] = None
    status: str = ""

    @property
    def ok(self):
        return self.hypothesis_holds and bool(self.conclusion_holds)


def check_sequence_bound(a: Sequence[float], C1, p, atol=1e-12) -> SequenceVerdict:
    """Check hypothesis then conclusion of the 1/k^2 sequence bound.

    ``a[0]`` is a_2, ``a[1]`` is a_3, and so on.  The conclusion is only
    assessed when the hypothesis holds at every index.
    """
    if not 0 < p < 1 / 3:
        raise PreconditionViolation("p must lie in (0, 1/3)")
    if C1 < 0:
        raise ValueError("C1 must be nonnegative")
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("sequence must be nonnegative")
    k = np.arange(2, a.size + 2, dtype=np.float64)
    prefix = np.concatenate([[0.0], np.cumsum(a)[:-1]])  # sum_{t=2}^{k-1} a_t
    lhs = k * k / 4.0 * a
    rhs = C1 + p / (1.0 - p) * prefix
    hyp_bad = np.flatnonzero(lhs > rhs + atol * (1.0 + np.abs(rhs)))
    if hyp_bad.size:
        first = int(k[hyp_bad[0]])
        return SequenceVerdict(False, None, first, None, f"HypothesisFailed at k={first}")
    bound = 4.0 * C1 / ((1.0 - 3.0 * p) * k * k)
    con_bad = np.flatnonzero(a > bound + atol)
    if con_bad.size:
        first = int(k[con_bad[0]])
        return SequenceVerdict(True, False, None, first, f"conclusion fails at k={first}")
    return SequenceVerdict(True, True, status="hypothesis and conclusion hold")


def eag_sequence_from_trace(trace: Trace, z_star) -> np.ndarray:
    """a_k = ||eta(F(z_k)+c_k)||^2 / ||z0 - z*||^2 for k >= 2."""
    _, sq, _ = _scaled_rows(trace)
    d2 = float(np.sum((trace.z0 - np.asarray(z_star)) ** 2))
    return sq[1:] / d2
