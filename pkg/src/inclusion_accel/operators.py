"""Lipschitz operators, convex sets with projections, and resolvents of monotone operators.

Projections and resolvents accept either a single vector or a stack of vectors
(one per row); the row form is used to post-process whole traces at once.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DimMismatch, as_vector

MEMBERSHIP_TOL = 1e-9


class SetKind(enum.Enum):
    FULL_SPACE = "FullSpace"
    BOX = "Box"
    BALL = "Ball"
    SIMPLEX = "Simplex"


class ResolventKind(enum.Enum):
    ZERO = "Zero"
    NORMAL_CONE = "NormalCone"
    SOFT_THRESHOLD = "SoftThreshold"
    LINEAR_MONOTONE = "LinearMonotone"


def _check_last_dim(z, dim):
    if np.shape(z)[-1] != dim:
        raise DimMismatch(f"expected trailing dimension {dim}, got {np.shape(z)}")


def project_box(lo, hi, z):
    """Componentwise clamp of ``z`` to ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if lo.shape != hi.shape or z.shape[-1:] != lo.shape[-1:]:
        raise DimMismatch(f"box bounds {lo.shape}/{hi.shape} do not match point {z.shape}")
    if np.any(lo > hi):
        raise ValueError("box requires lo <= hi componentwise")
    return np.minimum(np.maximum(z, lo), hi)


def project_ball(center, radius, z):
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if z.shape[-1:] != center.shape:
        raise DimMismatch(f"ball center {center.shape} does not match point {z.shape}")
    d = z - center
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    scale = np.where(norm > radius, radius / np.where(norm > 0, norm, 1.0), 1.0)
    return center + d * scale


def project_simplex(z, total=1.0):
    """Projection onto ``{x >= 0, sum(x) = total}`` by sort-and-threshold."""
    z = np.asarray(z, dtype=np.float64)
    u = -np.sort(-z, axis=-1)
    css = np.cumsum(u, axis=-1) - total
    idx = np.arange(1, z.shape[-1] + 1)
    cond = u - css / idx > 0
    # last index where cond holds; cond[0] is always true
    rho = z.shape[-1] - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, np.expand_dims(rho, -1), axis=-1) / (
        np.expand_dims(rho, -1) + 1.0
    )
    return np.maximum(z - theta, 0.0)


def resolvent_soft_threshold(lam, eta, w):
    """Resolvent of ``eta * d(lam*||.||_1)``: componentwise shrinkage by ``eta*lam``."""
    if np.any(np.asarray(lam) < 0) or eta <= 0:
        raise ValueError("soft threshold needs lam >= 0 and eta > 0")
    w = np.asarray(w, dtype=np.float64)
    return np.sign(w) * np.maximum(np.abs(w) - eta * np.asarray(lam, dtype=np.float64), 0.0)


@dataclass(frozen=True, eq=False)
class ConvexSet:
    kind: SetKind
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    total: float = 1.0

    @classmethod
    def full_space(cls, dim):
        return cls(SetKind.FULL_SPACE, int(dim))

    @classmethod
    def box(cls, lo, hi, dim=None):
        if dim is not None:
            lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (dim,)).copy()
            hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (dim,)).copy()
        lo = as_vector(lo, name="lo")
        hi = as_vector(hi, dim=lo.shape[0], name="hi")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi componentwise")
        return cls(SetKind.BOX, lo.shape[0], lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        center = as_vector(center, name="center")
        if not radius > 0:
            raise ValueError("radius must be positive")
        return cls(SetKind.BALL, center.shape[0], center=center, radius=float(radius))

    @classmethod
    def simplex(cls, dim, total=1.0):
        if not total > 0:
            raise ValueError("simplex total must be positive")
        return cls(SetKind.SIMPLEX, int(dim), total=float(total))

    def project(self, z):
        z = np.asarray(z, dtype=np.float64)
        _check_last_dim(z, self.dim)
        if self.kind is SetKind.FULL_SPACE:
            return z.copy()
        if self.kind is SetKind.BOX:
            return project_box(self.lo, self.hi, z)
        if self.kind is SetKind.BALL:
            return project_ball(self.center, self.radius, z)
        return project_simplex(z, self.total)

    def contains(self, z, tol=MEMBERSHIP_TOL):
        z = np.asarray(z, dtype=np.float64)
        _check_last_dim(z, self.dim)
        if self.kind is SetKind.FULL_SPACE:
            return bool(np.all(np.isfinite(z)))
        if self.kind is SetKind.BOX:
            return bool(np.all(z >= self.lo - tol) and np.all(z <= self.hi + tol))
        if self.kind is SetKind.BALL:
            return bool(np.all(np.linalg.norm(z - self.center, axis=-1) <= self.radius + tol))
        return bool(np.all(z >= -tol) and np.all(np.abs(z.sum(axis=-1) - self.total) <= tol))

    def sample(self, rng, size=None):
        """Draw points of the set (not uniformly for every kind; used for property checks)."""
        shape = (self.dim,) if size is None else (size, self.dim)
        if self.kind is SetKind.FULL_SPACE:
            return rng.normal(size=shape) * 3.0
        if self.kind is SetKind.BOX:
            return self.lo + (self.hi - self.lo) * rng.uniform(size=shape)
        if self.kind is SetKind.BALL:
            d = rng.normal(size=shape)
            d /= np.linalg.norm(d, axis=-1, keepdims=True)
            r = self.radius * rng.uniform(size=shape[:-1] + (1,)) ** (1.0 / self.dim)
            return self.center + d * r
        return self.total * rng.dirichlet(np.ones(self.dim), size=size)

    def describe(self):
        if self.kind is SetKind.BOX:
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        if self.kind is SetKind.BALL:
            return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}
        if self.kind is SetKind.SIMPLEX:
            return {"kind": "simplex", "total": self.total}
        return {"kind": "full_space"}


@dataclass(frozen=True, eq=False)
class MaxMonotoneOperator:
    """A maximally monotone operator ``A`` represented through its resolvent ``(I + eta*A)^-1``."""

    kind: ResolventKind
    dim: int
    set: Optional[ConvexSet] = None
    lam: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    _factor_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def zero(cls, dim):
        return cls(ResolventKind.ZERO, int(dim))

    @classmethod
    def normal_cone(cls, convex_set: ConvexSet):
        if convex_set.kind is SetKind.FULL_SPACE:
            # N of the whole space is {0}
            return cls(ResolventKind.ZERO, convex_set.dim, set=convex_set)
        return cls(ResolventKind.NORMAL_CONE, convex_set.dim, set=convex_set)

    @classmethod
    def soft_threshold(cls, lam, dim=None):
        lam = np.asarray(lam, dtype=np.float64)
        if dim is not None:
            lam = np.broadcast_to(lam, (dim,)).copy()
        lam = as_vector(lam, name="lam")
        if np.any(lam < 0):
            raise ValueError("soft threshold weights must be nonnegative")
        return cls(ResolventKind.SOFT_THRESHOLD, lam.shape[0], lam=lam)

    @classmethod
    def linear_monotone(cls, matrix):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimMismatch("linear monotone operator needs a square matrix")
        if np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -1e-10:
            raise ValueError("matrix is not monotone (symmetric part not PSD)")
        return cls(ResolventKind.LINEAR_MONOTONE, m.shape[0], matrix=m)

    @property
    def feasible_set(self) -> ConvexSet:
        if self.kind is ResolventKind.NORMAL_CONE:
            return self.set
        return ConvexSet.full_space(self.dim)

    def resolvent(self, eta, w):
        if eta <= 0:
            raise ValueError("resolvent parameter must be positive")
        w = np.asarray(w, dtype=np.float64)
        _check_last_dim(w, self.dim)
        if self.kind is ResolventKind.ZERO:
            return w.copy()
        if self.kind is ResolventKind.NORMAL_CONE:
            return self.set.project(w)
        if self.kind is ResolventKind.SOFT_THRESHOLD:
            return resolvent_soft_threshold(self.lam, eta, w)
        lu = self._factor(eta)
        import scipy.linalg

        return scipy.linalg.lu_solve(lu, w.T).T

    def _factor(self, eta):
        import scipy.linalg

        lu = self._factor_cache.get(eta)
        if lu is None:
            lu = scipy.linalg.lu_factor(np.eye(self.dim) + eta * self.matrix)
            self._factor_cache[eta] = lu
        return lu

    def element(self, z):
        """Some element of A(z); the minimal-norm one where that is cheap."""
        z = as_vector(z, self.dim)
        if self.kind is ResolventKind.LINEAR_MONOTONE:
            return self.matrix @ z
        if self.kind is ResolventKind.SOFT_THRESHOLD:
            return self.lam * np.sign(z)
        return np.zeros(self.dim)


@dataclass(frozen=True)
class ConeCertificate:
    c: np.ndarray
    at: np.ndarray
    eta: float


def extract_certificate(A: MaxMonotoneOperator, eta, w):
    """Apply the resolvent and recover the element ``(w - z)/eta`` of A(z)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    w = np.asarray(w, dtype=np.float64)
    z = A.resolvent(eta, w)
    return z, ConeCertificate(c=(w - z) / eta, at=z, eta=eta)


@dataclass(frozen=True, eq=False)
class LipschitzOperator:
    """Single-valued operator with known Lipschitz constant.

    ``matrix`` is set for linear operators ``F(z) = M z``; the compiled trace
    kernels are only used for those.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    dim: int
    matrix: Optional[np.ndarray] = None

    @classmethod
    def linear(cls, matrix, lipschitz_constant=None):
        m = np.ascontiguousarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimMismatch("linear operator needs a square matrix")
        if lipschitz_constant is None:
            lipschitz_constant = sigma_max(m)
        return cls(lambda z, _m=m: z @ _m.T, float(lipschitz_constant), m.shape[0], m)

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        _check_last_dim(z, self.dim)
        return self.func(z)

    eval = __call__


def sigma_max(matrix, iters=200, tol=1e-10, seed=0):
    """Largest singular value by power iteration on ``M^T M``."""
    m = np.asarray(matrix, dtype=np.float64)
    if not np.any(m):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.normal(size=m.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = m.T @ (m @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(np.sqrt(norm))
        if abs(new - sigma) <= tol * max(new, 1.0):
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(m @ v))


def estimate_lipschitz(F, domain_sampler, n_pairs=1000, inflate=1.1):
    """Largest sampled ratio ``|F(z)-F(z')| / |z-z'|`` times ``inflate``.

    ``domain_sampler()`` must return one point per call.  Diagnostic only: the
    estimate is a lower bound on the true constant before inflation.
    """
    if n_pairs < 100:
        raise ValueError("n_pairs must be at least 100")
    best = 0.0
    for _ in range(n_pairs):
        z, zp = domain_sampler(), domain_sampler()
        dz = np.linalg.norm(z - zp)
        if dz == 0.0:
            continue
        best = max(best, float(np.linalg.norm(F(z) - F(zp)) / dz))
    return inflate * best
