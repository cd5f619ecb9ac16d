"""Projected EAG, accelerated forward-backward splitting (AS) and extragradient (EG).

The step functions are pure (state in, state out).  ``run`` drives them and,
for linear operators with a closed-form resolvent, hands the whole loop to the
trace kernels instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

import numpy as np

from . import kernels
from .core import (
    DegenerateResidual,
    InsufficientData,
    IterateRecord,
    NonFiniteIterate,
    RunReport,
    SolverConfig,
    StepSizeViolation,
    Trace,
    as_vector,
)
from .operators import (
    ConeCertificate,
    ConvexSet,
    LipschitzOperator,
    MaxMonotoneOperator,
    ResolventKind,
    SetKind,
    extract_certificate,
)

RATE_K_MIN = 50


@dataclass(frozen=True)
class EagState:
    k: int
    z0: np.ndarray
    z: np.ndarray
    cert: Optional[ConeCertificate] = None
    half: Optional[np.ndarray] = None
    fz: Optional[np.ndarray] = None
    fhalf: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AsState:
    k: int
    z0: np.ndarray
    z: np.ndarray
    cert: ConeCertificate
    half: Optional[np.ndarray] = None
    fz: Optional[np.ndarray] = None
    fhalf: Optional[np.ndarray] = None


EgState = EagState


def initial_eag_state(z0, Z: ConvexSet | None = None, F: LipschitzOperator | None = None):
    z0 = as_vector(z0, name="z0")
    if Z is not None and not Z.contains(z0):
        raise ValueError("EAG/EG need a feasible starting point z0")
    fz = F(z0) if F is not None else None
    return EagState(k=0, z0=z0, z=z0.copy(), fz=fz)


def initial_as_state(z0, F: LipschitzOperator | None = None):
    z0 = as_vector(z0, name="z0")
    fz = F(z0) if F is not None else None
    return AsState(k=0, z0=z0, z=z0.copy(), cert=ConeCertificate(np.zeros_like(z0), z0, 1.0), fz=fz)


def _finite(k, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteIterate(f"non-finite iterate at k={k + 1}", k=k + 1)


def eag_step(state: EagState, F: LipschitzOperator, Z: ConvexSet, eta, delta=0.0) -> EagState:
    if eta <= 0:
        raise StepSizeViolation("eta must be positive")
    k, z, z0 = state.k, state.z, state.z0
    fz = state.fz if state.fz is not None else F(z)
    base = z + (1.0 / (k + delta + 1.0)) * (z0 - z)
    half = Z.project(base - eta * fz)
    fhalf = F(half)
    w = base - eta * fhalf
    z_next = Z.project(w)
    fz_next = F(z_next)
    _finite(k, z_next, fz_next, fhalf)
    cert = ConeCertificate(c=(w - z_next) / eta, at=z_next, eta=eta)
    return EagState(k + 1, z0, z_next, cert, half, fz_next, fhalf)


def eg_step(state: EagState, F: LipschitzOperator, Z: ConvexSet, eta) -> EagState:
    if eta <= 0:
        raise StepSizeViolation("eta must be positive")
    k, z = state.k, state.z
    fz = state.fz if state.fz is not None else F(z)
    half = Z.project(z - eta * fz)
    fhalf = F(half)
    w = z - eta * fhalf
    z_next = Z.project(w)
    fz_next = F(z_next)
    _finite(k, z_next, fz_next, fhalf)
    cert = ConeCertificate(c=(w - z_next) / eta, at=z_next, eta=eta)
    return EagState(k + 1, state.z0, z_next, cert, half, fz_next, fhalf)


def as_step(state: AsState, F: LipschitzOperator, A: MaxMonotoneOperator, eta, rho=0.0) -> AsState:
    if eta <= max(0.0, -2.0 * rho):
        raise StepSizeViolation(f"AS requires eta > max(0, -2*rho); got eta={eta}, rho={rho}")
    k, z, z0 = state.k, state.z, state.z0
    fz = state.fz if state.fz is not None else F(z)
    g = fz + state.cert.c
    base = z + (1.0 / (k + 1.0)) * (z0 - z)
    half = base - (k * (eta + 2.0 * rho) / (k + 1.0)) * g
    fhalf = F(half)
    w = base - eta * fhalf - (2.0 * k * rho / (k + 1.0)) * g
    z_next, cert = extract_certificate(A, eta, w)
    fz_next = F(z_next)
    _finite(k, z_next, fz_next, fhalf)
    return AsState(k + 1, z0, z_next, cert, half, fz_next, fhalf)


def default_eta(algorithm, L, rho=0.0):
    """EAG/EG: 1/(3L).  AS: midpoint of the admissible interval (max(0,-2 rho), 1/L)."""
    if algorithm in ("EAG", "EG"):
        return 1.0 / (3.0 * L)
    lo = max(0.0, -2.0 * rho)
    hi = 1.0 / L
    if lo >= hi:
        raise StepSizeViolation(f"empty step-size interval for rho={rho}, L={L}")
    return 0.5 * (lo + hi)


def _kernel_spec(A: MaxMonotoneOperator):
    """Map a resolvent onto a kernel code, or None when only the generic path applies."""
    n = A.dim
    empty = np.zeros(n)
    if A.kind is ResolventKind.ZERO:
        return kernels.RES_IDENTITY, empty, empty, 0.0
    if A.kind is ResolventKind.SOFT_THRESHOLD:
        return kernels.RES_SOFT, A.lam, empty, 0.0
    if A.kind is ResolventKind.NORMAL_CONE:
        S = A.set
        if S.kind is SetKind.BOX:
            return kernels.RES_BOX, S.lo, S.hi, 0.0
        if S.kind is SetKind.BALL:
            return kernels.RES_BALL, S.center, empty, S.radius
    return None


def _generic_trace(algorithm, F, A, z0, config):
    Z = A.feasible_set
    T = config.max_iters
    n = z0.shape[0]
    zs, fzs, cs, hs, fhs = [z0], [F(z0)], [np.zeros(n)], [], []
    if algorithm == "AS":
        state = replace(initial_as_state(z0), fz=fzs[0])
        step = lambda s: as_step(s, F, A, config.eta, config.rho)  # noqa: E731
    else:
        state = replace(initial_eag_state(z0, Z), fz=fzs[0])
        if algorithm == "EAG":
            step = lambda s: eag_step(s, F, Z, config.eta, config.delta)  # noqa: E731
        else:
            step = lambda s: eg_step(s, F, Z, config.eta)  # noqa: E731
    status = 0
    for _ in range(T):
        try:
            state = step(state)
        except NonFiniteIterate:
            status = 1
            break
        zs.append(state.z)
        fzs.append(state.fz)
        cs.append(state.cert.c)
        hs.append(state.half)
        fhs.append(state.fhalf)
        if config.target_residual > 0 and np.linalg.norm(state.fz + state.cert.c) <= config.target_residual:
            break
    empty = np.zeros((0, n))
    return (np.array(zs), np.array(fzs), np.array(cs),
            np.array(hs) if hs else empty, np.array(fhs) if fhs else empty, status)


def compute_trace(problem, config: SolverConfig, z0, use_kernels=True) -> tuple[Trace, Optional[str]]:
    """Run the iteration and return the raw trace plus an abort message (or None)."""
    F, A = problem.F, problem.A
    z0 = as_vector(z0, F.dim, name="z0")
    alg = config.algorithm
    if alg in ("EAG", "EG") and A.kind not in (ResolventKind.ZERO, ResolventKind.NORMAL_CONE):
        raise ValueError(f"{alg} needs a projection (normal-cone or zero operator), got {A.kind.value}")
    if alg in ("EAG", "EG") and not A.feasible_set.contains(z0):
        raise ValueError(f"{alg} needs a feasible starting point")
    spec = _kernel_spec(A) if (use_kernels and F.matrix is not None) else None
    if spec is not None:
        kind, a, b, s = spec
        M, T, tgt = F.matrix, config.max_iters, config.target_residual
        if alg == "EAG":
            out = kernels.eag_trace(M, z0, config.eta, config.delta, T, tgt, kind, a, b, s)
        elif alg == "AS":
            out = kernels.as_trace(M, z0, config.eta, config.rho, T, tgt, kind, a, b, s)
        else:
            out = kernels.eg_trace(M, z0, config.eta, T, tgt, kind, a, b, s)
        Z, FZ, C, H, FH, done, status = out
    else:
        Z, FZ, C, H, FH, status = _generic_trace(alg, F, A, z0, config)
    trace = Trace(alg, config.eta, np.asarray(Z), np.asarray(FZ), np.asarray(C),
                  np.asarray(H), np.asarray(FH), delta=config.delta, rho=config.rho)
    abort = None
    if status:
        abort = f"non-finite iterate at k={trace.iterations + 1}"
    return trace, abort


def run(problem, config: SolverConfig, z0=None, hooks: Iterable[Callable] = (),
        use_kernels=True) -> RunReport:
    """Run ``config.algorithm`` on ``problem`` and assemble records and verdicts.

    ``hooks`` are called with each ``IterateRecord`` in order.
    """
    from . import diagnostics, residuals

    if z0 is None:
        z0 = problem.default_start()
    trace, abort = compute_trace(problem, config, z0, use_kernels=use_kernels)
    T = trace.iterations
    if T == 0:
        return RunReport([], math.nan, True, math.inf, config, "trivially satisfied (no iterations)",
                         trace=trace, aborted=abort)

    cert = trace.cert_residuals()[1:]
    nat = residuals.natural_residual_rows(problem.F, problem.A, trace.z[1:], trace.fz[1:])
    L = problem.L
    if config.algorithm == "AS":
        pot = diagnostics.potential_u_trace(trace)
        ptrace = diagnostics.check_u_descent(trace, config.eta, config.rho)
    else:
        pot = diagnostics.potential_v_trace(trace)
        ptrace = diagnostics.check_v_descent(trace, config.eta, L) if config.eta * L < 1 else None
    slack = [None] + list(ptrace.slack) if ptrace is not None else [None] * T
    if config.algorithm == "EG":
        slack = [None] * T
    dist = None
    if problem.z_star is not None:
        dist = np.linalg.norm(trace.z[1:] - problem.z_star, axis=1)

    records = []
    for i in range(T):
        rec = IterateRecord(
            k=i + 1,
            cert_residual=float(cert[i]),
            natural_residual=float(nat[i]),
            potential=float(pot[i]),
            descent_slack=None if slack[i] is None else float(slack[i]),
            distance_to_solution=None if dist is None else float(dist[i]),
        )
        records.append(rec)
        for hook in hooks:
            hook(rec)

    verdict = diagnostics.envelope_verdict(problem, config, trace)
    try:
        from .core import fit_rate_exponent

        exponent = fit_rate_exponent(records, RATE_K_MIN)
    except DegenerateResidual:
        exponent = -math.inf
    except InsufficientData:
        exponent = math.nan
    return RunReport(records, exponent, verdict.ok, verdict.margin, config, verdict.status,
                     trace=trace, potential_trace=ptrace if config.algorithm != "EG" else None,
                     aborted=abort)
