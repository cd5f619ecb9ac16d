"""Problem zoo: instances with analytically known Lipschitz constant, comonotonicity and solution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import InclusionError, as_vector
from .operators import (
    ConvexSet,
    LipschitzOperator,
    MaxMonotoneOperator,
    ResolventKind,
    sigma_max,
)


class InfeasibleSolution(InclusionError, ValueError):
    pass


class ParameterViolation(InclusionError, ValueError):
    pass


class NotMonotone(InclusionError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    name: str
    F: LipschitzOperator
    A: MaxMonotoneOperator
    L: float
    rho: float = 0.0
    z_star: Optional[np.ndarray] = None
    algorithms: frozenset = frozenset({"EAG", "AS", "EG"})
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.F.dim

    @property
    def Z(self) -> ConvexSet:
        return self.A.feasible_set

    def default_start(self):
        """All-ones start, projected onto the feasible set."""
        return self.Z.project(np.ones(self.dim))

    def random_start(self, seed):
        rng = np.random.default_rng(seed)
        return self.Z.project(rng.uniform(-1.0, 1.0, self.dim))

    def graph_sample(self, z):
        """A point of the graph of F + A at z (using A's cheap element)."""
        return self.F(z) + self.A.element(z)


def _constraint_set(constraint, dim):
    if constraint is None or constraint == "none":
        return ConvexSet.full_space(dim)
    if isinstance(constraint, ConvexSet):
        return constraint
    if isinstance(constraint, list):  # JSON arrays
        constraint = tuple(constraint)
    if isinstance(constraint, str):
        constraint = (constraint,)
    if not isinstance(constraint, (tuple, dict)) or not constraint:
        raise ValueError(f"cannot read constraint {constraint!r}")
    kind = constraint[0] if isinstance(constraint, tuple) else constraint.get("kind")
    if isinstance(constraint, tuple):
        args = constraint[1:]
    else:
        args = {k: v for k, v in constraint.items() if k != "kind"}
    if kind == "box":
        lo, hi = (args if isinstance(args, tuple) else (args["lo"], args["hi"]))
        return ConvexSet.box(lo, hi, dim=dim)
    if kind == "ball":
        if isinstance(args, tuple):
            radius = args[0]
            center = args[1] if len(args) > 1 else np.zeros(dim)
        else:
            radius = args["radius"]
            center = args.get("center", np.zeros(dim))
        center = np.broadcast_to(np.asarray(center, dtype=np.float64), (dim,)).copy()
        return ConvexSet.ball(center, radius)
    if kind == "simplex":
        total = args[0] if isinstance(args, tuple) and args else (
            args.get("total", 1.0) if isinstance(args, dict) else 1.0)
        return ConvexSet.simplex(dim, total)
    if kind in ("none", "full_space"):
        return ConvexSet.full_space(dim)
    raise ValueError(f"unknown constraint kind {kind!r}")


def _with_solution(name, F, A, L, rho, candidate, algorithms, params, require=True):
    Z = A.feasible_set
    z_star = None
    if Z.contains(candidate):
        z_star = candidate
    elif require:
        raise InfeasibleSolution(f"{name}: the analytic solution lies outside the constraint set")
    return ProblemInstance(name, F, A, L, rho, z_star, frozenset(algorithms), params)


def make_bilinear(B, constraint=None, require_solution=False) -> ProblemInstance:
    """``f(x, y) = x^T B y``: F(x, y) = (B y, -B^T x), skew and monotone.

    When (0, 0) is infeasible, ``z_star`` is omitted (or InfeasibleSolution is
    raised with ``require_solution=True``).
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if not np.any(B):
        raise ValueError("B must be nonzero")
    nx, ny = B.shape
    n = nx + ny
    M = np.zeros((n, n))
    M[:nx, nx:] = B
    M[nx:, :nx] = -B.T
    L = sigma_max(B)
    F = LipschitzOperator.linear(M, L)
    Z = _constraint_set(constraint, n)
    A = MaxMonotoneOperator.normal_cone(Z)
    return _with_solution("bilinear", F, A, L, 0.0, np.zeros(n), {"EAG", "AS", "EG"},
                          {"B": B.tolist(), "constraint": Z.describe()}, require_solution)


def rotation_generator(dim_pairs):
    J = np.zeros((2 * dim_pairs, 2 * dim_pairs))
    for i in range(dim_pairs):
        J[2 * i, 2 * i + 1] = 1.0
        J[2 * i + 1, 2 * i] = -1.0
    return J


def make_rotation_family(mu, nu, dim_pairs=1) -> ProblemInstance:
    """F = mu I + nu J with J a block rotation by 90 degrees; exactly rho-comonotone.

    <dF, dz> = mu|dz|^2 and |dF|^2 = (mu^2+nu^2)|dz|^2, so rho = mu/(mu^2+nu^2).
    """
    if mu == 0 and nu == 0:
        raise ParameterViolation("(mu, nu) must not both vanish")
    if dim_pairs < 1:
        raise ParameterViolation("dim_pairs must be positive")
    L = math.hypot(mu, nu)
    rho = mu / (mu * mu + nu * nu)
    if rho <= -1.0 / (2.0 * L):
        raise ParameterViolation(f"rho={rho:.6g} must exceed -1/(2L)={-1 / (2 * L):.6g}")
    n = 2 * dim_pairs
    M = mu * np.eye(n) + nu * rotation_generator(dim_pairs)
    F = LipschitzOperator.linear(M, L)
    A = MaxMonotoneOperator.zero(n)
    algs = {"EAG", "AS", "EG"} if mu >= 0 else {"AS"}
    return ProblemInstance("rotation", F, A, L, min(rho, 0.0) if mu < 0 else 0.0, np.zeros(n),
                           frozenset(algs), {"mu": mu, "nu": nu, "dim_pairs": dim_pairs})


def make_identity_1d() -> ProblemInstance:
    """F(x) = x on [0, 1]; solution 0."""
    F = LipschitzOperator.linear(np.eye(1), 1.0)
    A = MaxMonotoneOperator.normal_cone(ConvexSet.box([0.0], [1.0]))
    return ProblemInstance("identity_1d", F, A, 1.0, 0.0, np.zeros(1),
                           frozenset({"EAG", "AS", "EG"}), {})


def make_l1_regularized_minmax(B, lambda_g=0.0, lambda_h=0.0) -> ProblemInstance:
    """min_x max_y x^T B y + lambda_g|x|_1 - lambda_h|y|_1 with A the l1 subdifferentials."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if not np.any(B):
        raise ValueError("B must be nonzero")
    if lambda_g < 0 or lambda_h < 0:
        raise ValueError("regularisation weights must be nonnegative")
    base = make_bilinear(B)
    nx, ny = B.shape
    lam = np.concatenate([np.full(nx, float(lambda_g)), np.full(ny, float(lambda_h))])
    A = MaxMonotoneOperator.soft_threshold(lam)
    return ProblemInstance("l1_minmax", base.F, A, base.L, 0.0, np.zeros(nx + ny),
                           frozenset({"AS"}),
                           {"B": B.tolist(), "lambda_g": lambda_g, "lambda_h": lambda_h})


def make_monotone_linear(M, constraint=None) -> ProblemInstance:
    """F(z) = M z with M + M^T positive semidefinite."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-10:
        raise NotMonotone("symmetric part of M has a negative eigenvalue")
    n = M.shape[0]
    L = sigma_max(M)
    F = LipschitzOperator.linear(M, L)
    Z = _constraint_set(constraint, n)
    A = MaxMonotoneOperator.normal_cone(Z)
    return _with_solution("monotone_linear", F, A, L, 0.0, np.zeros(n), {"EAG", "AS", "EG"},
                          {"M": M.tolist(), "constraint": Z.describe()}, require=False)


def random_monotone_matrix(n, rng, skew_weight=1.0):
    """PSD symmetric part plus a skew part; useful for randomized test batteries."""
    G = rng.normal(size=(n, n))
    S = rng.normal(size=(n, n))
    return 0.1 * G @ G.T / n + skew_weight * (S - S.T) / math.sqrt(n)


def load_matrix(path) -> np.ndarray:
    """Read a dense matrix: first line ``rows cols``, then whitespace-separated rows."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    rows, cols = int(lines[0][0]), int(lines[0][1])
    data = np.array([[float(v) for v in ln] for ln in lines[1:]], dtype=np.float64)
    if data.shape != (rows, cols):
        raise ValueError(f"{path}: header says {rows}x{cols}, found {data.shape}")
    return data


def save_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _matrix_param(params, key):
    if f"{key}_path" in params:
        return load_matrix(params[f"{key}_path"])
    return np.asarray(params[key], dtype=np.float64)


REGISTRY: dict[str, Callable[..., ProblemInstance]] = {
    "bilinear": lambda **p: make_bilinear(_matrix_param(p, "B"), p.get("constraint")),
    "rotation": lambda **p: make_rotation_family(p["mu"], p["nu"], p.get("dim_pairs", 1)),
    "identity_1d": lambda **p: make_identity_1d(),
    "l1_minmax": lambda **p: make_l1_regularized_minmax(
        _matrix_param(p, "B"), p.get("lambda_g", 0.0), p.get("lambda_h", 0.0)),
    "monotone_linear": lambda **p: make_monotone_linear(_matrix_param(p, "M"), p.get("constraint")),
}

DESCRIPTIONS = {
    "bilinear": "x^T B y saddle, optional box/ball constraint (params: B or B_path, constraint)",
    "rotation": "mu I + nu J, rho-comonotone with rho = mu/(mu^2+nu^2) (params: mu, nu, dim_pairs)",
    "identity_1d": "F(x) = x on [0, 1]",
    "l1_minmax": "bilinear saddle with l1 regularisers (params: B, lambda_g, lambda_h)",
    "monotone_linear": "F(z) = M z, M + M^T PSD, optional constraint (params: M or M_path, constraint)",
}


def make_problem(name, **params) -> ProblemInstance:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**params)


# ---------------------------------------------------------------- invariant battery


@dataclass
class Battery:
    lipschitz_ok: bool
    monotone_ok: bool
    solution_ok: Optional[bool]

    @property
    def ok(self):
        return self.lipschitz_ok and self.monotone_ok and self.solution_ok is not False


def check_instance(problem: ProblemInstance, n_pairs=1000, seed=0, tol=1e-9) -> Battery:
    """Sampled Lipschitz, (co)monotonicity and solution-certificate checks."""
    rng = np.random.default_rng(seed)
    Z = problem.Z
    zs, zps = Z.sample(rng, n_pairs), Z.sample(rng, n_pairs)
    F = problem.F
    dF = F(zs) - F(zps)
    dz = zs - zps
    nz = np.linalg.norm(dz, axis=1)
    lip_ok = bool(np.all(np.linalg.norm(dF, axis=1) <= problem.L * nz * (1 + tol) + tol))
    if problem.rho < 0:
        # graph pairs of F + A; zoo instances with rho < 0 have A = 0
        dE = np.array([problem.graph_sample(a) - problem.graph_sample(b) for a, b in zip(zs, zps)])
        mono_ok = bool(np.all(np.einsum("ij,ij->i", dE, dz)
                              >= problem.rho * np.einsum("ij,ij->i", dE, dE) - tol))
    else:
        mono_ok = bool(np.all(np.einsum("ij,ij->i", dF, dz) >= -tol * (1 + nz**2)))
    sol_ok = None
    if problem.z_star is not None:
        zs_ = problem.z_star
        # certificate: c = -F(z*) must lie in A(z*); verify via the resolvent fixed point
        sol_ok = bool(np.linalg.norm(zs_ - problem.A.resolvent(1.0, zs_ - F(zs_))) <= tol)
    return Battery(lip_ok, mono_ok, sol_ok)
