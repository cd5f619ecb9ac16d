"""Convergence measures: certificate (tangent-residual) bound, natural residual, gap functions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import DimMismatch, InclusionError, as_vector
from .operators import ConvexSet, LipschitzOperator, MaxMonotoneOperator, SetKind


class UnsupportedSet(InclusionError, ValueError):
    pass


class DimTooLarge(InclusionError, ValueError):
    pass


class GapVariant(enum.Enum):
    SVI = "SVI"
    MVI = "MVI"


@dataclass(frozen=True)
class GapQuery:
    z: np.ndarray
    D: float
    variant: GapVariant = GapVariant.SVI

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("restriction radius D must be positive")


@dataclass(frozen=True)
class GridGap:
    """Grid maximum of the Minty gap; a lower bound on the true value."""

    value: float
    spacing: float
    points: int
    lower_bound_only: bool = True

    def __float__(self):
        return self.value


def cert_residual(Fz, c) -> float:
    """``||F(z) + c||``; an upper bound on the tangent residual whenever c is in A(z)."""
    Fz = np.asarray(Fz, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if Fz.shape != c.shape:
        raise DimMismatch(f"F(z) has shape {Fz.shape}, certificate has {c.shape}")
    return float(np.linalg.norm(Fz + c))


def natural_residual(F: LipschitzOperator, A: MaxMonotoneOperator, z) -> float:
    """``||z - J_A[z - F(z)]||`` with unit resolvent parameter."""
    z = as_vector(z, F.dim)
    return float(np.linalg.norm(z - A.resolvent(1.0, z - F(z))))


def natural_residual_rows(F, A, Z, FZ=None):
    """Natural residual of each row of ``Z`` (``FZ`` may supply precomputed F values)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] == 0:
        return np.zeros(0)
    if FZ is None:
        FZ = np.array([F(z) for z in Z])
    return np.linalg.norm(Z - A.resolvent(1.0, Z - FZ), axis=1)


def _linear_min_box_ball(g, z, lo, hi, D, max_iter=200, mu_tol=1e-10):
    """Minimise <g, d> over lo-z <= d <= hi-z, ||d|| <= D.

    For a multiplier mu > 0 the Lagrangian minimiser is clip(-g/mu, lo-z, hi-z),
    whose norm is nonincreasing in mu; bisect mu until the ball constraint is tight.
    """
    dlo, dhi = lo - z, hi - z
    corner = np.where(g > 0, dlo, np.where(g < 0, dhi, 0.0))
    if np.linalg.norm(corner) <= D:
        return corner

    def d_of(mu):
        return np.clip(-g / mu, dlo, dhi)

    gnorm = np.linalg.norm(g)
    mu_lo, mu_hi = 0.0, gnorm / D  # at mu_hi, ||-g/mu|| = D so the clip is feasible
    for _ in range(max_iter):
        if mu_lo > 0 and (mu_hi - mu_lo) <= mu_tol * mu_hi:
            break
        mid = 0.5 * (mu_lo + mu_hi)
        if np.linalg.norm(d_of(mid)) > D:
            mu_lo = mid
        else:
            mu_hi = mid
    return d_of(mu_hi)


def _linear_min_two_balls(g, z, center, radius, D):
    """Minimise <g, x> over B(center, radius) ∩ B(z, D) with z in the first ball."""
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        return z.copy()
    u_dir = g / gnorm
    cand = z - D * u_dir
    if np.linalg.norm(cand - center) <= radius + 1e-15:
        return cand
    cand = center - radius * u_dir
    if np.linalg.norm(cand - z) <= D + 1e-15:
        return cand
    # optimum lies on the intersection of both spheres
    axis = center - z
    dist = np.linalg.norm(axis)
    axis = axis / dist
    t = (D * D - radius * radius + dist * dist) / (2.0 * dist)
    ring = math.sqrt(max(D * D - t * t, 0.0))
    g_perp = g - (g @ axis) * axis
    pn = np.linalg.norm(g_perp)
    if pn == 0.0:
        return z + t * axis
    return z + t * axis - ring * g_perp / pn


def gap_svi(F: LipschitzOperator, Z: ConvexSet, query: GapQuery) -> float:
    """Exact ``max <F(z), z - z'>`` over ``z'`` in ``Z ∩ B(z, D)``."""
    if query.variant is not GapVariant.SVI:
        raise ValueError("gap_svi needs an SVI query")
    z = as_vector(query.z, F.dim)
    if not Z.contains(z):
        raise ValueError("gap query point must lie in Z")
    g = F(z)
    D = float(query.D)
    if Z.kind is SetKind.FULL_SPACE:
        return D * float(np.linalg.norm(g))
    if Z.kind is SetKind.BOX:
        d = _linear_min_box_ball(g, z, Z.lo, Z.hi, D)
        return max(0.0, -float(g @ d))
    if Z.kind is SetKind.BALL:
        x = _linear_min_two_balls(g, z, Z.center, Z.radius, D)
        return max(0.0, float(g @ (z - x)))
    raise UnsupportedSet("gap_svi has no exact solver for the simplex; use gap_svi_sampled")


def gap_svi_sampled(F, Z: ConvexSet, query: GapQuery, n_samples=10000, seed=0) -> GridGap:
    """Sampling lower bound of the Stampacchia gap, for sets without an exact solver."""
    z = as_vector(query.z, F.dim)
    rng = np.random.default_rng(seed)
    pts = Z.sample(rng, n_samples)
    pts = pts[np.linalg.norm(pts - z, axis=1) <= query.D]
    g = F(z)
    vals = (z - pts) @ g if len(pts) else np.zeros(0)
    return GridGap(max(0.0, float(vals.max(initial=0.0))), math.nan, len(pts))


def gap_mvi_grid(F, Z: ConvexSet, query: GapQuery, grid_points=1000) -> GridGap:
    """Grid maximum of ``<F(z'), z - z'>`` over ``Z ∩ B(z, D)``; dimension 1 or 2 only."""
    z = as_vector(query.z, F.dim)
    n = z.shape[0]
    if n > 2:
        raise DimTooLarge("the Minty gap is only enumerated on 1-D and 2-D grids")
    D = float(query.D)
    lo, hi = z - D, z + D
    if Z.kind is SetKind.BOX:
        lo, hi = np.maximum(lo, Z.lo), np.minimum(hi, Z.hi)
    elif Z.kind is SetKind.BALL:
        lo, hi = np.maximum(lo, Z.center - Z.radius), np.minimum(hi, Z.center + Z.radius)
    elif Z.kind is SetKind.SIMPLEX:
        raise UnsupportedSet("the simplex has empty interior; a grid cannot resolve it")
    axes = [np.linspace(lo[i], hi[i], grid_points) for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    pts = np.vstack([pts, z[None, :]])
    keep = np.linalg.norm(pts - z, axis=1) <= D + 1e-12
    if Z.kind is SetKind.BOX:
        keep &= np.all((pts >= Z.lo - 1e-12) & (pts <= Z.hi + 1e-12), axis=1)
    elif Z.kind is SetKind.BALL:
        keep &= np.linalg.norm(pts - Z.center, axis=1) <= Z.radius + 1e-12
    pts = pts[keep]
    fp = F(pts)
    vals = np.einsum("ij,ij->i", fp, z - pts)
    spacing = float(max((hi[i] - lo[i]) / max(grid_points - 1, 1) for i in range(n)))
    return GridGap(float(vals.max()), spacing, int(pts.shape[0]))
