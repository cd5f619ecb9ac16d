import numpy as np
import pytest

from inclusion_accel.core import DimMismatch
from inclusion_accel.operators import (
    ConvexSet,
    LipschitzOperator,
    MaxMonotoneOperator,
    ResolventKind,
    estimate_lipschitz,
    extract_certificate,
    project_ball,
    project_box,
    project_simplex,
    resolvent_soft_threshold,
    sigma_max,
)

SETS = {
    "full": ConvexSet.full_space(4),
    "box": ConvexSet.box([-1.0, 0.0, -2.0, 0.5], [1.0, 0.0, 0.3, 3.0]),
    "ball": ConvexSet.ball([0.5, -0.2, 0.0, 1.0], 1.3),
    "simplex": ConvexSet.simplex(4, 2.0),
}


def power_iteration_oracle(M, iters=5000):
    """Plain power iteration on M^T M, run to convergence (tolerance 1e-8 on sigma)."""
    v = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
    sigma = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        v = w / np.linalg.norm(w)
        new = np.linalg.norm(M @ v)
        if abs(new - sigma) < 1e-12:
            break
        sigma = new
    return new


def test_project_box_clamps():
    np.testing.assert_array_equal(project_box([0, 0], [1, 1], [2, -1]), [1, 0])


def test_project_box_inside_unchanged():
    z = np.array([0.3, 0.9])
    np.testing.assert_array_equal(project_box([0, 0], [1, 1], z), z)


def test_project_box_first_eag_half_step():
    # F(x) = x, eta = 1/3, z0 = 1 on [0, 1]
    assert project_box([0.0], [1.0], [1.0 - 1.0 / 3.0])[0] == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_project_box_dim_mismatch():
    with pytest.raises(DimMismatch):
        project_box([0, 0], [1, 1], [1, 2, 3])


def test_project_ball_examples(rng):
    np.testing.assert_allclose(project_ball([0, 0], 1.0, [3, 4]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(project_ball([1, 2], 1.0, [1, 2]), [1, 2])
    for _ in range(100):
        z = rng.normal(size=3)
        z *= rng.uniform() / np.linalg.norm(z)
        np.testing.assert_array_equal(project_ball(np.zeros(3), 1.0, z), z)
    with pytest.raises(DimMismatch):
        project_ball([0, 0], 1.0, [1, 2, 3])


def test_project_simplex_against_qp(rng):
    from scipy.optimize import minimize

    for _ in range(10):
        z = rng.normal(size=5) * 2
        p = project_simplex(z, 1.5)
        res = minimize(lambda x: 0.5 * np.sum((x - z) ** 2), np.full(5, 0.3), method="SLSQP",
                       bounds=[(0, None)] * 5,
                       constraints=[{"type": "eq", "fun": lambda x: x.sum() - 1.5}],
                       options={"ftol": 1e-14, "maxiter": 500})
        np.testing.assert_allclose(p, res.x, atol=1e-6)


@pytest.mark.parametrize("name", sorted(SETS))
def test_projection_invariants(name, rng):
    S = SETS[name]
    z = rng.normal(size=(1000, 4)) * 3
    zp = rng.normal(size=(1000, 4)) * 3
    pz, pzp = S.project(z), S.project(zp)
    # idempotence, nonexpansiveness, membership
    np.testing.assert_allclose(S.project(pz), pz, atol=1e-12)
    assert np.all(np.linalg.norm(pz - pzp, axis=1) <= np.linalg.norm(z - zp, axis=1) + 1e-12)
    assert all(S.contains(p) for p in pz)
    # variational characterisation against points of the set
    inside = S.sample(rng, 1000)
    assert np.all(np.einsum("ij,ij->i", z - pz, inside - pz) <= 1e-9)


def test_soft_threshold_examples():
    np.testing.assert_array_equal(resolvent_soft_threshold(1.0, 1.0, [2.0, -0.5, 0.0]), [1, 0, 0])
    w = np.array([0.3, -2.0])
    np.testing.assert_array_equal(resolvent_soft_threshold(0.0, 1.0, w), w)


def test_soft_threshold_grid_oracle():
    # argmin 0.5 (z - 3)^2 + 2 * 0.5 |z| by grid search
    grid = np.linspace(-5, 5, 10_000_001)
    obj = 0.5 * (grid - 3.0) ** 2 + 2.0 * 0.5 * np.abs(grid)
    oracle = grid[np.argmin(obj)]
    assert oracle == pytest.approx(2.0, abs=1e-6)
    assert resolvent_soft_threshold(0.5, 2.0, [3.0])[0] == pytest.approx(oracle, abs=1e-6)


def test_soft_threshold_satisfies_subgradient_inclusion(rng):
    lam, eta = 0.7, 1.3
    w = rng.normal(size=200) * 2
    z = resolvent_soft_threshold(lam, eta, w)
    c = (w - z) / eta
    nz = z != 0
    np.testing.assert_allclose(c[nz], lam * np.sign(z[nz]), atol=1e-12)
    assert np.all(np.abs(c[~nz]) <= lam + 1e-12)


def test_extract_certificate_examples():
    z, cert = extract_certificate(MaxMonotoneOperator.zero(2), 0.7, np.array([1.0, -2.0]))
    np.testing.assert_array_equal(z, [1.0, -2.0])
    np.testing.assert_array_equal(cert.c, 0.0)

    A = MaxMonotoneOperator.normal_cone(ConvexSet.box([0.0], [1.0]))
    z, cert = extract_certificate(A, 1.0, np.array([7.0 / 9.0]))
    assert z[0] == 7.0 / 9.0 and cert.c[0] == 0.0

    z, cert = extract_certificate(A, 1.0, np.array([1.5]))
    assert z[0] == 1.0 and cert.c[0] == 0.5
    np.testing.assert_array_equal(cert.at, z)


@pytest.mark.parametrize("name", ["box", "ball", "simplex"])
def test_normal_cone_certificates(name, rng):
    S = SETS[name]
    A = MaxMonotoneOperator.normal_cone(S)
    for eta in (0.1, 1.0, 7.0):
        for w in rng.normal(size=(50, 4)) * 3:
            z, cert = extract_certificate(A, eta, w)
            np.testing.assert_array_equal(z, S.project(w))  # resolvent is the projection
            zp = S.sample(rng, 1000)
            assert np.all((zp - cert.at) @ cert.c <= 1e-9 * (1 + np.linalg.norm(cert.c)))


def resolvents(rng):
    M = rng.normal(size=(4, 4))
    M = M - M.T + 0.1 * np.eye(4)
    return [
        MaxMonotoneOperator.zero(4),
        MaxMonotoneOperator.normal_cone(SETS["box"]),
        MaxMonotoneOperator.normal_cone(SETS["ball"]),
        MaxMonotoneOperator.normal_cone(SETS["simplex"]),
        MaxMonotoneOperator.soft_threshold([0.1, 0.5, 1.0, 2.0]),
        MaxMonotoneOperator.linear_monotone(M),
    ]


def test_resolvents_firmly_nonexpansive(rng):
    for A in resolvents(rng):
        for eta in (0.2, 1.0, 3.0):
            w, wp = rng.normal(size=(2, 1000, 4)) * 2
            d = A.resolvent(eta, w) - A.resolvent(eta, wp)
            assert np.all(np.einsum("ij,ij->i", d, d) <= np.einsum("ij,ij->i", d, w - wp) + 1e-9)


def test_linear_monotone_resolvent_solves_system(rng):
    M = rng.normal(size=(5, 5))
    M = M - M.T
    A = MaxMonotoneOperator.linear_monotone(M)
    w = rng.normal(size=5)
    z = A.resolvent(0.5, w)
    np.testing.assert_allclose(z + 0.5 * M @ z, w, atol=1e-12)
    assert A.kind is ResolventKind.LINEAR_MONOTONE


def test_linear_monotone_rejects_non_monotone():
    with pytest.raises(ValueError):
        MaxMonotoneOperator.linear_monotone(-np.eye(2))


def test_sigma_max_matches_svd(rng):
    for _ in range(10):
        M = rng.normal(size=(5, 5))
        assert sigma_max(M) == pytest.approx(np.linalg.svd(M, compute_uv=False)[0], rel=1e-8)


def test_estimate_lipschitz_linear(rng):
    M = rng.normal(size=(4, 4))
    oracle = power_iteration_oracle(M)
    F = LipschitzOperator.linear(M)
    est = estimate_lipschitz(F, lambda: rng.normal(size=4), n_pairs=5000)
    assert oracle <= est <= 1.1 * oracle + 1e-12
    # directions concentrated near the top singular vector push the estimate into range
    v = np.linalg.svd(M)[2][0]
    est = estimate_lipschitz(F, lambda: rng.normal() * v + 1e-3 * rng.normal(size=4), n_pairs=200)
    assert oracle <= est <= 1.1 * oracle + 1e-9


def test_estimate_lipschitz_trivial(rng):
    zero = LipschitzOperator(lambda z: np.zeros_like(z), 0.0, 3)
    assert estimate_lipschitz(zero, lambda: rng.normal(size=3), 100) == 0.0
    triple = LipschitzOperator(lambda z: 3.0 * z, 3.0, 3)
    assert 3.0 <= estimate_lipschitz(triple, lambda: rng.normal(size=3), 100) <= 3.3 + 1e-12
    with pytest.raises(ValueError):
        estimate_lipschitz(triple, lambda: rng.normal(size=3), 99)


def test_lipschitz_operator_sampled(rng):
    for S in SETS.values():
        M = rng.normal(size=(4, 4))
        F = LipschitzOperator.linear(M)
        z, zp = S.sample(rng, 1000), S.sample(rng, 1000)
        lhs = np.linalg.norm(F(z) - F(zp), axis=1)
        assert np.all(lhs <= F.lipschitz_constant * np.linalg.norm(z - zp, axis=1) * (1 + 1e-9))
