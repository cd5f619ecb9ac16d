"""Batch harness: ``inclusion-accel {run,verify-identities,compare,list-problems}``.

Exit codes: 0 all enabled checks passed, 1 a check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, problems, residuals
from .core import RTOL, InclusionError, SolverConfig
from .solvers import RATE_K_MIN, default_eta, run

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
TRACE_HEADER = ["k", "cert_residual", "natural_residual", "potential", "descent_slack",
                "distance_to_solution"]
CHECKS = ("v_descent", "u_descent", "identities", "envelopes", "sequence_bound", "gap_examples",
          "residual_order")
SLOPE_THRESHOLD = -0.9


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    problem_name: str
    problem_params: dict
    solver: dict
    seeds: list
    trace_path: str = "trace.csv"
    report_path: str = "report.json"
    checks: dict = field(default_factory=dict)
    z0: list | None = None
    solvers: list | None = None

    @classmethod
    def from_dict(cls, doc):
        try:
            prob = doc["problem"]
            name = prob["name"] if isinstance(prob, dict) else prob
            params = prob.get("params", {}) if isinstance(prob, dict) else {}
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"missing problem section: {exc}") from None
        if name not in problems.REGISTRY:
            raise ConfigError(f"unknown problem {name!r}; known: {sorted(problems.REGISTRY)}")
        outputs = doc.get("outputs", {})
        checks = {c: False for c in CHECKS}
        checks["residual_order"] = True
        user_checks = doc.get("checks", {})
        if user_checks == "all" or user_checks is True:
            user_checks = {c: True for c in CHECKS}
        unknown = set(user_checks) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}")
        checks.update(user_checks)
        seeds = doc.get("seeds", [0])
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds) or not seeds:
            raise ConfigError("seeds must be a nonempty list of integers")
        return cls(name, params, dict(doc.get("solver", {})), seeds,
                   outputs.get("trace", "trace.csv"), outputs.get("report", "report.json"),
                   checks, doc.get("z0"), doc.get("solvers"))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(doc)


def build_problem(cfg: ExperimentConfig):
    try:
        return problems.make_problem(cfg.problem_name, **cfg.problem_params)
    except (InclusionError, ValueError, KeyError, TypeError, OSError) as exc:
        raise ConfigError(f"cannot build problem {cfg.problem_name!r}: {exc}") from None


def solver_config(section: dict, problem) -> SolverConfig:
    """Fill defaults: rho from the problem, eta from ``eta`` / ``eta_times_L`` or the default rule."""
    s = dict(section)
    alg = s.pop("algorithm", "EAG")
    if alg not in problem.algorithms:
        raise ConfigError(f"{alg} is not admissible for problem {problem.name!r} "
                          f"(admissible: {sorted(problem.algorithms)})")
    rho = s.pop("rho", None)
    rho = problem.rho if rho is None else float(rho)
    eta = s.pop("eta", None)
    scaled = s.pop("eta_times_L", None)
    try:
        if eta is None:
            eta = scaled / problem.L if scaled is not None else default_eta(alg, problem.L, rho)
        unknown = set(s) - {"delta", "max_iters", "target_residual"}
        if unknown:
            raise ConfigError(f"unknown solver keys {sorted(unknown)}")
        return SolverConfig(alg, float(eta), float(s.get("delta", 0.0)),
                            rho if alg == "AS" else 0.0, int(s.get("max_iters", 1000)),
                            float(s.get("target_residual", 0.0)))
    except (InclusionError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def preconditions(problem, sc: SolverConfig, checks: dict) -> list[str]:
    """Violated preconditions of the enabled checks; nonempty means a config error."""
    errs = []
    x = sc.eta * problem.L
    if checks.get("envelopes"):
        if problem.z_star is None:
            errs.append("envelopes: problem has no known solution")
        if sc.algorithm == "EAG" and not x < 1 / math.sqrt(3):
            errs.append(f"envelopes: EAG needs eta*L < 1/sqrt(3), got {x:.6g}")
        if sc.algorithm == "EAG" and sc.delta != 0:
            errs.append("envelopes: no envelope for delta > 0")
        if sc.algorithm == "AS" and not (max(0.0, -2 * sc.rho) < sc.eta < 1 / problem.L):
            errs.append("envelopes: AS needs eta in (max(0,-2 rho), 1/L)")
        if sc.algorithm == "AS" and not sc.rho > -1 / (2 * problem.L):
            errs.append("envelopes: AS needs rho > -1/(2L)")
    if checks.get("v_descent") and sc.algorithm == "EAG" and not x < 1:
        errs.append(f"v_descent: needs eta*L < 1, got {x:.6g}")
    if checks.get("sequence_bound") and sc.algorithm == "EAG":
        if not x < 1 / math.sqrt(3) or sc.delta != 0 or problem.z_star is None:
            errs.append("sequence_bound: needs eta*L < 1/sqrt(3), delta = 0 and a known solution")
    return errs


# ---------------------------------------------------------------- checks


def run_checks(problem, sc: SolverConfig, report, checks: dict) -> dict:
    """Evaluate enabled checks on a finished run; each entry is pass/fail/skipped plus detail."""
    out = {}
    trace = report.trace
    alg = sc.algorithm

    def put(name, passed, detail=""):
        out[name] = {"status": "pass" if passed else "fail", "detail": detail}

    def skip(name, why):
        out[name] = {"status": "skipped", "detail": why}

    if report.aborted:
        out["finite"] = {"status": "fail", "detail": report.aborted}
    if trace.iterations == 0:
        for name in CHECKS:
            if checks.get(name) and name != "gap_examples":
                skip(name, "no iterations")
        if checks.get("gap_examples"):
            put("gap_examples", *gap_example())
        return out
    if checks.get("residual_order"):
        bad = [r.k for r in report.records
               if r.natural_residual > r.cert_residual + RTOL * (1 + r.cert_residual)]
        put("residual_order", not bad, f"natural > certificate residual at k={bad[:5]}" if bad else "")
    if checks.get("v_descent"):
        if alg != "EAG":
            skip("v_descent", "EAG only")
        else:
            pt = report.potential_trace
            v = pt.violations
            put("v_descent", v.size == 0, f"violations at k={v[:5].tolist()}" if v.size else "")
    if checks.get("u_descent"):
        if alg != "AS":
            skip("u_descent", "AS only")
        else:
            v = report.potential_trace.violations
            put("u_descent", v.size == 0, f"violations at k={v[:5].tolist()}" if v.size else "")
    if checks.get("identities"):
        if alg == "EG":
            skip("identities", "no potential identity for EG")
        elif trace.iterations < 2:
            skip("identities", "fewer than two iterations")
        else:
            res = diagnostics.identity_residuals_from_trace(trace, problem.L)
            put("identities", bool(np.all(res <= diagnostics.IDENTITY_RTOL)),
                f"max relative residual {res.max():.3e}")
    if checks.get("envelopes"):
        if alg == "EG":
            skip("envelopes", "no last-iterate envelope for EG")
        elif report.envelope_ok is None:
            skip("envelopes", report.envelope_status)
        else:
            put("envelopes", report.envelope_ok, f"margin {report.envelope_margin:.4g}")
    if checks.get("sequence_bound"):
        if alg != "EAG":
            skip("sequence_bound", "EAG only")
        elif trace.iterations < 2:
            skip("sequence_bound", "fewer than two iterations")
        else:
            a = diagnostics.eag_sequence_from_trace(trace, problem.z_star)
            verdict = diagnostics.check_sequence_bound(a, 11.0, (sc.eta * problem.L) ** 2)
            put("sequence_bound", verdict.ok, verdict.status)
    if checks.get("gap_examples"):
        ok, detail = gap_example()
        put("gap_examples", ok, detail)
    return out


def gap_example():
    """Natural residual, Stampacchia and Minty gaps of F(x) = x on [0, 1] at x = 1/2."""
    p = problems.make_identity_1d()
    x = np.array([0.5])
    nat = residuals.natural_residual(p.F, p.A, x)
    svi = residuals.gap_svi(p.F, p.Z, residuals.GapQuery(x, 1.0))
    mvi = residuals.gap_mvi_grid(p.F, p.Z, residuals.GapQuery(x, 1.0, residuals.GapVariant.MVI),
                                 grid_points=10_000).value
    ok = nat == 0.5 and abs(svi - 0.25) <= 1e-10 and abs(mvi - 0.0625) <= 1e-3
    return ok, f"natural={nat!r} svi={svi!r} mvi={mvi!r}"


# ---------------------------------------------------------------- output


def fmt(x):
    if x is None:
        return ""
    return format(float(x), ".17g")


def trace_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in records:
        w.writerow([r.k, fmt(r.cert_residual), fmt(r.natural_residual), fmt(r.potential),
                    fmt(r.descent_slack), fmt(r.distance_to_solution)])
    return buf.getvalue()


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _seeded_path(path: Path, seed, multi):
    if not multi:
        return path
    return path.with_name(f"{path.stem}_seed{seed}{path.suffix}")


def max_workers():
    raw = os.environ.get("INCLUSION_ACCEL_THREADS")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        n = 1
    return max(1, n)


def _start(problem, cfg: ExperimentConfig, seed):
    if cfg.z0 is not None:
        return np.asarray(cfg.z0, dtype=np.float64)
    return problem.random_start(seed)


def _one_run(problem, sc, cfg, seed, out_dir: Path, multi):
    report = run(problem, sc, z0=_start(problem, cfg, seed))
    results = run_checks(problem, sc, report, cfg.checks)
    tpath = _seeded_path(out_dir / cfg.trace_path, seed, multi)
    write_atomic(tpath, trace_csv(report.records))
    entry = report.to_dict()
    entry.update(seed=seed, trace=str(tpath), checks=results, problem=problem.name)
    return entry


def _failures(entries):
    fails = []
    for e in entries:
        for name, res in e.get("checks", {}).items():
            if res["status"] == "fail":
                fails.append({"seed": e.get("seed"), "algorithm": e["config"]["algorithm"],
                              "check": name, "detail": res["detail"]})
    return fails


def cmd_run(config_path, out_dir=None) -> int:
    try:
        cfg = load_config(config_path)
        problem = build_problem(cfg)
        sc = solver_config(cfg.solver, problem)
        errs = preconditions(problem, sc, cfg.checks)
        if errs:
            raise ConfigError("; ".join(errs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(out_dir) if out_dir else Path(config_path).resolve().parent
    multi = len(cfg.seeds) > 1
    try:
        with concurrent.futures.ThreadPoolExecutor(min(max_workers(), len(cfg.seeds))) as pool:
            entries = list(pool.map(lambda s: _one_run(problem, sc, cfg, s, out, multi), cfg.seeds))
    except (InclusionError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    failures = _failures(entries)
    doc = {"problem": problem.name, "runs": entries, "failures": failures, "passed": not failures}
    write_atomic(out / cfg.report_path, json.dumps(doc, indent=2) + "\n")
    for e in entries:
        print(f"seed={e['seed']} {e['config']['algorithm']} iterations={e['iterations']} "
              f"rate={e['fitted_rate_exponent']} envelope={e['envelope_status']}")
        for name, res in e["checks"].items():
            print(f"  {name}: {res['status']} {res['detail']}")
    if failures:
        print(json.dumps({"failures": failures}), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def random_identity_draw(rng, dim):
    vecs = [rng.uniform(-1.0, 1.0, dim) for _ in range(8)]
    p = rng.uniform(0.05, 0.95)
    q = rng.uniform(1.0, 50.0)
    r = rng.uniform(-0.45, 0.0)
    return vecs, p, q, r


def identity_battery(n_trials, seed, dims=(1, 3, 8), perturb=False):
    """Max relative residual of both identities over ``n_trials`` draws per dimension plus zero."""
    rng = np.random.default_rng(seed)
    pert_eag = {"mon": 1e-3} if perturb else None
    pert_as = {"comono": 1e-3} if perturb else None
    worst_eag = worst_as = 0.0
    for dim in dims:
        zero = [np.zeros(dim)] * 8
        worst_eag = max(worst_eag, diagnostics.verify_identity_eag(*zero, 0.5, 1.0, perturb=pert_eag))
        worst_as = max(worst_as, diagnostics.verify_identity_as(*zero[:7], 0.5, 1.0, -0.2,
                                                                perturb=pert_as))
        for _ in range(n_trials):
            vecs, p, q, r = random_identity_draw(rng, dim)
            worst_eag = max(worst_eag, diagnostics.verify_identity_eag(*vecs, p, q, perturb=pert_eag))
            worst_as = max(worst_as, diagnostics.verify_identity_as(*vecs[:7], p, q, r,
                                                                    perturb=pert_as))
    return worst_eag, worst_as


def cmd_verify_identities(n_trials, seed, mutate=False) -> int:
    if n_trials < 1:
        print("--trials must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    worst_eag, worst_as = identity_battery(n_trials, seed, perturb=mutate)
    label = " (mutated coefficients)" if mutate else ""
    print(f"EAG identity max relative residual{label}: {worst_eag:.3e}")
    print(f"AS identity max relative residual{label}: {worst_as:.3e}")
    ok = worst_eag <= diagnostics.IDENTITY_RTOL and worst_as <= diagnostics.IDENTITY_RTOL
    return EXIT_OK if ok else EXIT_FAIL


def cmd_compare(config_path, out_dir=None) -> int:
    try:
        cfg = load_config(config_path)
        problem = build_problem(cfg)
        if cfg.solvers:
            sections = [dict(s) for s in cfg.solvers]
        else:
            # step sizes are algorithm specific; fall back to each default rule
            base = {k: v for k, v in cfg.solver.items() if k not in ("algorithm", "eta", "eta_times_L")}
            sections = [dict(base, algorithm=a) for a in ("EAG", "AS", "EG") if a in problem.algorithms]
        configs = [solver_config(s, problem) for s in sections]
        for sc in configs:
            errs = preconditions(problem, sc, cfg.checks)
            if errs:
                raise ConfigError("; ".join(errs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(out_dir) if out_dir else Path(config_path).resolve().parent
    z0 = _start(problem, cfg, cfg.seeds[0])
    rows, failures = [], []
    for sc in configs:
        rep = run(problem, sc, z0=z0)
        results = run_checks(problem, sc, rep, cfg.checks)
        reached = None
        if sc.target_residual > 0:
            reached = bool(rep.records) and rep.records[-1].cert_residual <= sc.target_residual
        row = {"algorithm": sc.algorithm, "eta": sc.eta, "iterations": len(rep.records),
               "fitted_rate_exponent": rep.fitted_rate_exponent,
               "final_cert_residual": rep.records[-1].cert_residual if rep.records else None,
               "reached_target": reached, "checks": results}
        asserted = sc.algorithm in ("EAG", "AS")
        slope = rep.fitted_rate_exponent
        if asserted and not (slope <= SLOPE_THRESHOLD) and not math.isnan(slope):
            failures.append({"algorithm": sc.algorithm, "check": "slope",
                             "detail": f"fitted exponent {slope:.4f} > {SLOPE_THRESHOLD}"})
        if asserted and math.isnan(slope) and sc.target_residual == 0:
            failures.append({"algorithm": sc.algorithm, "check": "slope",
                             "detail": f"too few iterations beyond k={RATE_K_MIN} to fit"})
        failures += [{"algorithm": sc.algorithm, "check": n, "detail": r["detail"]}
                     for n, r in results.items() if r["status"] == "fail"]
        rows.append(row)
        write_atomic(out / f"trace_{sc.algorithm}.csv", trace_csv(rep.records))
    print(f"{'algorithm':<10}{'rate exponent':>16}{'final residual':>18}  note")
    for row in rows:
        note = "asserted <= -0.9" if row["algorithm"] in ("EAG", "AS") else "descriptive"
        if row["reached_target"] is not None:
            note += f", reached target: {row['reached_target']}"
        slope = row["fitted_rate_exponent"]
        print(f"{row['algorithm']:<10}{slope:>16.4f}{row['final_cert_residual'] or 0.0:>18.3e}  {note}")
    doc = {"problem": problem.name, "solvers": rows, "failures": failures, "passed": not failures}
    write_atomic(out / cfg.report_path, json.dumps(doc, indent=2, default=_jsonable) + "\n")
    if failures:
        print(json.dumps({"failures": failures}), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"not serialisable: {type(x)}")


def cmd_list_problems() -> int:
    for name in sorted(problems.REGISTRY):
        print(f"{name:<16} {problems.DESCRIPTIONS[name]}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="inclusion-accel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one solver configuration and its checks")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    p = sub.add_parser("verify-identities", help="random battery for both descent identities")
    p.add_argument("--trials", type=int, default=1000, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--mutate", action="store_true",
                   help="perturb one coefficient by 1e-3; the battery must then fail")
    p = sub.add_parser("compare", help="fitted rate exponents of all admissible solvers")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    sub.add_parser("list-problems", help="list problem names")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "verify-identities":
        return cmd_verify_identities(args.trials, args.seed, args.mutate)
    if args.command == "compare":
        return cmd_compare(args.config, args.out)
    return cmd_list_problems()


if __name__ == "__main__":
    sys.exit(main())
