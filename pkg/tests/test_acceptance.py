"""Acceptance criteria, one test each; every test records a PASS/FAIL line in the summary."""
import math
import time

import numpy as np
import pytest

from inclusion_accel import cli, diagnostics
from inclusion_accel.core import SolverConfig
from inclusion_accel.operators import SetKind
from inclusion_accel.problems import (
    make_bilinear,
    make_identity_1d,
    make_l1_regularized_minmax,
    make_monotone_linear,
    make_rotation_family,
    random_monotone_matrix,
)
from inclusion_accel.residuals import GapQuery, GapVariant, gap_mvi_grid, gap_svi, natural_residual
from inclusion_accel.solvers import run

pytestmark = pytest.mark.acceptance

T_RATE = 10_000
T_DESCENT = 1_000
ENVELOPE_RTOL = 1e-9


def timed_run(problem, config, z0):
    t0 = time.perf_counter()
    rep = run(problem, config, z0=z0)
    return rep, time.perf_counter() - t0


def random_constraint(rng, n):
    kind = rng.choice(["none", "box", "ball"])
    if kind == "box":
        return ("box", -rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0))
    if kind == "ball":
        return ("ball", rng.uniform(0.2, 2.0))
    return None


@pytest.fixture(scope="module")
def runs():
    """All acceptance runs, keyed by criterion; shared by the cross-cutting criteria."""
    out = {}
    p1 = make_bilinear([[1.0]])
    out[1] = [(p1, *timed_run(p1, SolverConfig("EAG", eta=1 / (3 * p1.L), max_iters=T_RATE),
                              np.array([1.0, 1.0])))]
    p2 = make_bilinear(np.eye(2), ("box", -1, 1))
    out[2] = [(p2, *timed_run(p2, SolverConfig("EAG", eta=1 / (3 * p2.L), max_iters=T_RATE),
                              np.ones(4)))]
    p3 = make_rotation_family(-0.2, 1.0)
    eta3 = 0.5 * (-2 * p3.rho + 1 / p3.L)
    out[3] = [(p3, *timed_run(p3, SolverConfig("AS", eta=eta3, rho=p3.rho, max_iters=T_RATE),
                              np.array([1.0, 1.0])))]

    rng = np.random.default_rng(2024)
    out[4] = []
    for _ in range(20):
        n = int(rng.integers(1, 21))
        p = make_monotone_linear(random_monotone_matrix(n, rng), random_constraint(rng, n))
        eta = rng.uniform(0.05, 0.95) / p.L
        z0 = p.Z.project(rng.normal(size=n))
        out[4].append((p, *timed_run(p, SolverConfig("EAG", eta=eta, max_iters=T_DESCENT), z0)))

    out[5] = []
    for i in range(20):
        if i % 2 == 0:
            mu = -rng.uniform(0.0, 0.45)
            p = make_rotation_family(mu, 1.0, int(rng.integers(1, 6)))
        elif i % 4 == 1:
            n = int(rng.integers(2, 21))
            p = make_monotone_linear(random_monotone_matrix(n, rng), random_constraint(rng, n))
        else:
            p = make_l1_regularized_minmax(rng.normal(size=(3, 4)), rng.uniform(0, 1), rng.uniform(0, 1))
        lo = max(0.0, -2 * p.rho)
        eta = lo + rng.uniform(0.05, 0.95) * (1 / p.L - lo)
        z0 = rng.normal(size=p.dim)
        out[5].append((p, *timed_run(p, SolverConfig("AS", eta=eta, rho=p.rho, max_iters=T_DESCENT),
                                     z0)))
    return out


def envelope_check(rep, bound_sq):
    cert = np.array([r.cert_residual for r in rep.records])
    bound = np.sqrt(bound_sq) * (1 + ENVELOPE_RTOL)
    return bool(np.all(cert <= bound)), float(np.max(cert / bound))


def test_criterion_01_unconstrained_eag_rate(runs, verdict):
    p, rep, secs = runs[1][0]
    k = np.arange(1, T_RATE + 1)
    D = np.linalg.norm(np.array([1.0, 1.0]) - p.z_star)
    ok, worst = envelope_check(rep, 96.0 * D**2 * p.L**2 / k**2)
    same = np.allclose(diagnostics.envelope_eag_unconstrained(k, 1 / 3, p.L, D), 96 * D**2 / k**2)
    verdict("1 unconstrained EAG envelope 96 D^2 L^2/k^2", ok and same and len(rep.records) == T_RATE
            and secs < 1.0, f"max ratio {worst:.4f}, {secs:.3f}s")


def test_criterion_02_constrained_eag_rate(runs, verdict):
    p, rep, secs = runs[2][0]
    k = np.arange(1, T_RATE + 1)
    D = np.linalg.norm(np.ones(4) - p.z_star)
    ok, worst = envelope_check(rep, 594.0 * D**2 * p.L**2 / k**2)
    active = float(np.abs(rep.trace.c).max())
    verdict("2 constrained EAG envelope 594 D^2 L^2/k^2", ok and len(rep.records) == T_RATE
            and secs < 1.0, f"max ratio {worst:.4f}, max |c| {active:.3f}, {secs:.3f}s")


def test_criterion_03_as_comonotone_rate(runs, verdict):
    p, rep, secs = runs[3][0]
    eta, rho, L = rep.config_echo.eta, p.rho, p.L
    k = np.arange(1, T_RATE + 1)
    H0 = math.sqrt(diagnostics.h0_squared(rep.trace.z0, rep.trace.z[1], p.z_star))
    ok, worst = envelope_check(rep, (2 / ((eta + 2 * rho) * L)) ** 2 * H0**2 * L**2 / k**2)
    verdict("3 AS comonotone envelope", ok and len(rep.records) == T_RATE and secs < 1.0,
            f"rho={rho:.4f} eta={eta:.5f} max ratio {worst:.4f}, {secs:.3f}s")


def test_criterion_04_v_descent(runs, verdict):
    bad = []
    for p, rep, _ in runs[4]:
        pt = rep.potential_trace
        assert pt.rtol == 1e-8 and pt.potential.size == T_DESCENT
        if not pt.ok:
            bad.append((p.name, p.dim, pt.violations[:3].tolist()))
    dims = sorted(p.dim for p, _, _ in runs[4])
    verdict("4 V descent, 20 monotone-linear instances", not bad and len(runs[4]) == 20,
            f"dims {dims[0]}..{dims[-1]}, violations {bad}")


def test_criterion_05_u_descent(runs, verdict):
    bad = [(p.name, p.rho) for p, rep, _ in runs[5] if not rep.potential_trace.ok]
    rhos = [p.rho for p, _, _ in runs[5]]
    spans = any(r == 0 for r in rhos) and any(r < 0 for r in rhos)
    verdict("5 U descent, 20 instances with rho = 0 and rho < 0", not bad and spans,
            f"min rho {min(rhos):.4f}, violations {bad}")


def test_criterion_06_first_potential_bounds(runs, verdict):
    checked, bad = 0, []
    for key in (1, 2, 3, 4, 5):
        for p, rep, _ in runs[key]:
            if p.z_star is None:
                continue
            eta, t = rep.config_echo.eta, rep.trace
            if rep.config_echo.algorithm == "EAG":
                d0 = np.linalg.norm(t.z0 - p.z_star)
                bound = diagnostics.v1_bound(eta, p.L, d0)
                if p.Z.kind is SetKind.FULL_SPACE:
                    bound = min(bound, diagnostics.v1_bound_unconstrained(eta, p.L, d0))
            else:
                bound = diagnostics.u1_bound(eta, p.L, np.linalg.norm(t.z[1] - t.z0))
            checked += 1
            if rep.records[0].potential > bound * (1 + 1e-9) + 1e-12:
                bad.append((key, p.name))
    verdict("6 V_1 and U_1 bounds", not bad and checked == 43, f"{checked} runs, failures {bad}")


def test_criterion_07_identity_battery(verdict):
    eag, as_ = cli.identity_battery(1000, seed=7, dims=(1, 3, 8))
    m_eag, m_as = cli.identity_battery(10, seed=7, dims=(1, 3, 8), perturb=True)
    ok = eag <= 1e-9 and as_ <= 1e-9 and m_eag > 1e-9 and m_as > 1e-9
    verdict("7 identity battery and mutation test", ok,
            f"EAG {eag:.2e} AS {as_:.2e}; mutated EAG {m_eag:.2e} AS {m_as:.2e}")


def test_criterion_08_sequence_bound(runs, verdict):
    p, rep, _ = runs[1][0]
    p_ = (rep.config_echo.eta * p.L) ** 2
    trace_ok = diagnostics.check_sequence_bound(
        diagnostics.eag_sequence_from_trace(rep.trace, p.z_star), 11.0, p_).ok
    rng = np.random.default_rng(99)
    synth_ok = 0
    for _ in range(100):
        pp = rng.uniform(0.01, 1 / 3 - 1e-3)
        C1 = rng.uniform(0.0, 20.0)
        a = []
        for k in range(2, 502):
            cap = 4.0 / k**2 * (C1 + pp / (1 - pp) * math.fsum(a))
            a.append(cap * rng.uniform(0.5, 1.0))
        synth_ok += diagnostics.check_sequence_bound(a, C1, pp).ok
    verdict("8 sequence bound on EAG trace and 100 synthetic sequences", trace_ok and synth_ok == 100,
            f"trace {trace_ok}, synthetic {synth_ok}/100")


def test_criterion_09_gap_example(verdict):
    p = make_identity_1d()
    x = np.array([0.5])
    nat = natural_residual(p.F, p.A, x)
    svi = gap_svi(p.F, p.Z, GapQuery(x, 1.0))
    mvi = gap_mvi_grid(p.F, p.Z, GapQuery(x, 1.0, GapVariant.MVI), grid_points=10_000).value
    ok = nat == 0.5 and abs(svi - 0.25) <= 1e-10 and abs(mvi - 0.0625) <= 1e-3
    verdict("9 gap-vs-residual example", ok, f"natural {nat!r}, SVI {svi!r}, MVI {mvi!r}")


def test_criterion_10_natural_below_tangent(runs, verdict):
    n, bad = 0, 0
    for key in runs:
        for _, rep, _ in runs[key]:
            nat = np.array([r.natural_residual for r in rep.records])
            cert = np.array([r.cert_residual for r in rep.records])
            n += nat.size
            bad += int(np.sum(nat > cert + 1e-9))
    verdict("10 natural residual <= certificate residual", bad == 0 and n > 0,
            f"{n} iterates, {bad} violations")


def test_criterion_11_slope_separation(runs, verdict):
    slopes = {key: runs[key][0][1].fitted_rate_exponent for key in (1, 2, 3)}
    p1 = runs[1][0][0]
    eg = run(p1, SolverConfig("EG", eta=1 / (3 * p1.L), max_iters=T_RATE), z0=np.array([1.0, 1.0]))
    ok = all(s <= -0.9 for s in slopes.values())
    eg_slope = eg.fitted_rate_exponent
    eg_note = "residual hit exactly 0" if eg_slope == -math.inf else f"{eg_slope:.4f}"
    verdict("11 EAG/AS slopes <= -0.9", ok,
            f"c1 {slopes[1]:.4f} c2 {slopes[2]:.4f} c3 {slopes[3]:.4f}; "
            f"EG (descriptive) {eg_note}")
