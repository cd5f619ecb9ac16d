import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inclusion_accel.operators import ResolventKind, SetKind
from inclusion_accel.problems import (
    InfeasibleSolution,
    NotMonotone,
    ParameterViolation,
    REGISTRY,
    check_instance,
    load_matrix,
    make_bilinear,
    make_identity_1d,
    make_l1_regularized_minmax,
    make_monotone_linear,
    make_problem,
    make_rotation_family,
    random_monotone_matrix,
    save_matrix,
)
from inclusion_accel.residuals import natural_residual


def test_bilinear_examples(rng):
    p = make_bilinear([[1.0]])
    np.testing.assert_array_equal(p.F([2.0, 3.0]), [3.0, -2.0])
    assert p.L == pytest.approx(1.0) and np.all(p.z_star == 0)
    z, zp = rng.normal(size=(2, 2))
    assert (p.F(z) - p.F(zp)) @ (z - zp) == pytest.approx(0.0, abs=1e-15)

    q = make_bilinear(np.eye(2), ("box", -1, 1))
    assert q.Z.kind is SetKind.BOX and q.dim == 4 and q.L == pytest.approx(1.0)

    B = rng.normal(size=(5, 5))
    assert make_bilinear(B).L == pytest.approx(np.linalg.svd(B, compute_uv=False)[0], rel=1e-6)


def test_bilinear_infeasible_solution_is_omitted():
    p = make_bilinear([[1.0]], ("box", 0.5, 1.0))
    assert p.z_star is None
    with pytest.raises(InfeasibleSolution):
        make_bilinear([[1.0]], ("box", 0.5, 1.0), require_solution=True)
    with pytest.raises(ValueError):
        make_bilinear([[0.0]])


def test_rotation_examples():
    p = make_rotation_family(0.0, 1.0)
    assert p.L == 1.0 and p.rho == 0.0
    np.testing.assert_array_equal(p.F.matrix, make_bilinear(np.eye(1)).F.matrix)
    q = make_rotation_family(-0.2, 1.0)
    assert q.L == pytest.approx(math.sqrt(1.04))
    assert q.rho == pytest.approx(-0.2 / 1.04)
    assert q.rho > -1 / (2 * q.L)
    assert q.algorithms == frozenset({"AS"})
    with pytest.raises(ParameterViolation):
        make_rotation_family(-0.6, 1.0)
    with pytest.raises(ParameterViolation):
        make_rotation_family(0.0, 0.0)


@settings(max_examples=100)
@given(st.floats(-0.5, 2.0), st.floats(0.1, 3.0), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_rotation_exactness(mu, nu, pairs, seed):
    rho = mu / (mu * mu + nu * nu)
    if rho <= -1 / (2 * math.hypot(mu, nu)):
        with pytest.raises(ParameterViolation):
            make_rotation_family(mu, nu, pairs)
        return
    p = make_rotation_family(mu, nu, pairs)
    rng = np.random.default_rng(seed)
    z, zp = rng.normal(size=(2, 2 * pairs))
    dF, dz = p.F(z) - p.F(zp), z - zp
    assert dF @ dz == pytest.approx(mu * (dz @ dz), rel=1e-12, abs=1e-12)
    assert dF @ dF == pytest.approx((mu * mu + nu * nu) * (dz @ dz), rel=1e-12)


def test_rotation_comonotone_on_many_pairs(rng):
    p = make_rotation_family(-0.2, 1.0)
    z, zp = rng.normal(size=(2, 10_000, 2))
    dF, dz = p.F(z) - p.F(zp), z - zp
    lhs = np.einsum("ij,ij->i", dF, dz)
    rhs = p.rho * np.einsum("ij,ij->i", dF, dF)
    assert np.all(lhs >= rhs - 1e-9)


def test_identity_1d():
    p = make_identity_1d()
    for x in (0.0, 0.25, 0.5, 1.0):
        assert natural_residual(p.F, p.A, [x]) == x
    assert p.L == 1.0 and p.rho == 0.0 and p.z_star[0] == 0.0


def test_l1_minmax():
    p = make_l1_regularized_minmax([[1.0]], 0.5, 0.5)
    assert p.A.kind is ResolventKind.SOFT_THRESHOLD
    assert natural_residual(p.F, p.A, p.z_star) == 0.0
    q = make_l1_regularized_minmax([[1.0]])
    np.testing.assert_array_equal(q.A.resolvent(0.7, np.array([0.3, -2.0])), [0.3, -2.0])
    with pytest.raises(ValueError):
        make_l1_regularized_minmax([[1.0]], -0.1)


def test_monotone_linear(rng):
    assert make_monotone_linear(np.eye(3)).L == pytest.approx(1.0)
    S = rng.normal(size=(4, 4))
    assert check_instance(make_monotone_linear(S - S.T)).ok
    M = random_monotone_matrix(10, rng)
    p = make_monotone_linear(M)
    z, zp = rng.normal(size=(2, 1000, 10))
    assert np.all(np.einsum("ij,ij->i", p.F(z) - p.F(zp), z - zp) >= -1e-9)
    with pytest.raises(NotMonotone):
        make_monotone_linear(-np.eye(2))


def test_every_registered_instance_passes_its_battery(rng):
    instances = [
        make_problem("bilinear", B=[[1.0, 2.0]], constraint=("ball", 1.0)),
        make_problem("rotation", mu=-0.3, nu=1.0, dim_pairs=2),
        make_problem("rotation", mu=0.4, nu=1.0),
        make_problem("identity_1d"),
        make_problem("l1_minmax", B=[[1.0, 0.5], [0.0, 2.0]], lambda_g=0.2, lambda_h=0.1),
        make_problem("monotone_linear", M=random_monotone_matrix(5, rng).tolist(),
                     constraint={"kind": "box", "lo": -1, "hi": 1}),
    ]
    assert {p.name for p in instances} == set(REGISTRY)
    for p in instances:
        b = check_instance(p)
        assert b.ok and b.solution_ok, p.name


def test_battery_catches_a_wrong_lipschitz_constant():
    p = make_bilinear([[2.0]])
    from dataclasses import replace

    assert not check_instance(replace(p, L=1.0)).ok


def test_matrix_round_trip(tmp_path, rng):
    M = rng.normal(size=(3, 5))
    path = tmp_path / "m.txt"
    save_matrix(path, M)
    assert path.read_text().splitlines()[0] == "3 5"
    np.testing.assert_array_equal(load_matrix(path), M)
    p = make_problem("bilinear", B_path=str(path))
    assert p.dim == 8
    path.write_text("2 2\n1 2\n3 4 5\n")
    with pytest.raises(ValueError):
        load_matrix(path)


def test_unknown_problem_name():
    with pytest.raises(KeyError):
        make_problem("nope")


def test_starts_are_feasible():
    p = make_bilinear(np.eye(2), ("ball", 0.5))
    assert p.Z.contains(p.default_start())
    assert p.Z.contains(p.random_start(7))
    np.testing.assert_array_equal(p.random_start(7), p.random_start(7))
