"""Command-line experiment runner.

``levyflow run --config exp.json --out results/`` validates the JSON config
against the bundled schema, runs the selected checks and writes
``summary.json`` plus one CSV per check. Exit status: 0 when every selected
check passes, 1 when any fails, 2 on an invalid config.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import rng as _rng
from .additive_integral import (
    AffineIntegrand,
    ConstantIntegrand,
    PiecewiseConstantIntegrand,
    dyadic_pairs,
    modified_integral,
    moment_estimates_check,
    tail_bound_check,
)
from .davie_harness import (
    CheckReport,
    davie_uniqueness_check,
    flow_property_check,
    holder_flow_modulus_check,
    lipschitz_pairs,
    lp_lipschitz_estimate,
    scalar_linear_ratio,
)
from .errors import ConfigError
from .kinetic import explicit_kinetic_solve, holder_force_field, make_kinetic_problem
from .levy_core import (
    JUMP_LAWS,
    CompoundPoisson,
    GeneratingTriplet,
    SmallJumpStable,
    empirical_char_fn,
    levy_exponent,
    sample_levy_path,
)
from .matrix_flow import integration_by_parts_residual
from .sde_solver import (
    HolderField,
    LocalHolderField,
    SdeProblem,
    localize_drift,
    solve_strong,
    sup_distance,
)

SCHEMA_VERSION = 1
CHECKS = (
    "simulate-levy", "integrate", "ibp-check", "solve", "davie-check", "flow-check",
    "holder-check", "lp-estimate", "tail-check", "kinetic-demo",
)


def load_schema() -> dict:
    text = resources.files("levyflow").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


# ------------------------------------------------------------------ config
def _triplet_from(spec: dict) -> tuple[GeneratingTriplet, dict]:
    comps = []
    for c in spec.get("levy_measure", []):
        if c["type"] == "compound_poisson":
            j = dict(c["jumps"])
            law = JUMP_LAWS[j.pop("law")]
            if law is JUMP_LAWS["pareto"]:
                j["dim"] = spec["dim"]
            comps.append(CompoundPoisson(c["intensity"], law(**j)))
        else:
            comps.append(SmallJumpStable(c["alpha"], c.get("scale", 1.0), spec["dim"]))
    triplet = GeneratingTriplet(spec["dim"], spec.get("Q"), comps)
    sampling = {"small_jumps": spec.get("small_jumps", "truncate"), "epsilon": spec.get("epsilon", 1e-3)}
    return triplet, sampling


def _sigma_from(spec: dict):
    kind = spec["type"]
    if kind == "constant":
        return ConstantIntegrand(spec["matrix"])
    if kind == "affine":
        return AffineIntegrand(spec["sigma0"], spec["sigma1"])
    return PiecewiseConstantIntegrand(spec["breaks"], spec["matrices"])


def _drift_from(spec: dict, n: int) -> HolderField:
    fam = spec["family"]
    if fam == "zero":
        return HolderField.zero(n)
    if fam == "constant":
        return HolderField.constant(spec["c"])
    if fam == "sine":
        return HolderField.sine(n, spec.get("amplitude", 1.0))
    return localize_drift(
        LocalHolderField.linear(n, spec.get("beta", 1.0)), spec["R"], spec.get("margin", 1.0)
    )


@dataclass
class ExperimentConfig:
    """Validated experiment description with defaults filled in."""

    raw: dict
    seed: int
    n_paths: int
    T: float
    checks: list[str]
    output_dir: str
    problem: SdeProblem
    triplet: GeneratingTriplet
    sampling: dict
    start: np.ndarray
    start_time: float
    dt: float
    refine: int
    picard: dict
    tolerance_factor: float
    options: dict
    force: object = None

    @property
    def n_steps(self) -> int:
        """Native driver steps: the solver step refined for Richardson estimates."""
        return int(round(self.T / self.dt)) * self.refine

    def seeds(self, n: int | None = None) -> list[int]:
        return _rng.ensemble_seeds(self.seed, self.n_paths if n is None else n)

    def driver(self, seed: int):
        return sample_levy_path(self.triplet, self.T, self.n_steps, seed, **self.sampling)


def parse_config(data: dict, seed: int | None = None, out: str | None = None, checks=None) -> ExperimentConfig:
    """Validate ``data`` against the schema and build an :class:`ExperimentConfig`.

    Raises
    ------
    ConfigError
        On any schema violation or inconsistent value.
    """
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    T = float(data.get("T", 1.0))
    scheme = data.get("scheme", {})
    dt = float(scheme.get("dt", 1e-3))
    steps = T / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 1:
        raise ConfigError(f"dt={dt} does not divide T={T} into an integer number of steps")
    prob = data.get("problem", {"kind": "kinetic", "force": {"gamma": 0.75, "beta_prime": 0.5,
                                                              "c": 1.0, "c_prime": 0.5, "k": 0.1}})
    force = None
    try:
        if prob["kind"] == "kinetic":
            force = holder_force_field(prob["force"])
            problem = make_kinetic_problem(force, T)
            trip, sampling = problem.triplet, {}
            if "triplet" in data:
                trip, sampling = _triplet_from(data["triplet"])
                problem = replace(problem, triplet=trip)
            start = np.asarray(prob.get("start", [0.0] * problem.n), dtype=float)
            start_time = 0.0
        else:
            n = prob["n"]
            if "triplet" not in data:
                raise ConfigError("a generic problem needs a triplet")
            trip, sampling = _triplet_from(data["triplet"])
            problem = SdeProblem(
                n, trip.dim, prob["A"], _sigma_from(prob["sigma"]), _drift_from(prob["drift"], n), T, trip
            )
            start = np.asarray(prob.get("start", [0.0] * n), dtype=float)
            start_time = float(prob.get("start_time", 0.0))
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"config invalid: {exc}") from None
    if trip.dim != problem.d:
        raise ConfigError("triplet dimension does not match the problem noise dimension")
    if start.shape != (problem.n,):
        raise ConfigError(f"start point must have {problem.n} entries")
    if not 0.0 <= start_time < T:
        raise ConfigError("start_time must lie in [0, T)")
    chosen = list(checks) if checks else list(data.get("checks", []))
    for c in chosen:
        if c not in CHECKS:
            raise ConfigError(f"unknown check {c!r}")
    if "kinetic-demo" in chosen and (force is None or trip.has_jumps):
        raise ConfigError("kinetic-demo needs a kinetic problem driven by Brownian motion")
    return ExperimentConfig(
        raw=data,
        seed=int(data.get("seed", 0)) if seed is None else int(seed),
        n_paths=int(data.get("n_paths", 20)),
        T=T,
        checks=chosen,
        output_dir=out or data.get("output_dir", "out"),
        problem=problem,
        triplet=trip,
        sampling=sampling,
        start=start,
        start_time=start_time,
        dt=dt,
        refine=int(scheme.get("refine", 4)),
        picard={
            "tol": float(scheme.get("picard_tol", 1e-10)),
            "damping": float(scheme.get("damping", 0.5)),
            "max_iter": int(scheme.get("max_iter", 10_000)),
        },
        tolerance_factor=float(scheme.get("tolerance_factor", 10.0)),
        options=data.get("check_options", {}),
        force=force,
    )


# ------------------------------------------------------------------ checks
@dataclass
class CheckOutcome:
    report: CheckReport
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _path_table(grid, values, prefix: str, extra=None):
    cols = ["time"] + [f"{prefix}{i + 1}" for i in range(values.shape[1])]
    rows = [[t, *row] for t, row in zip(grid, values)]
    if extra is not None:
        cols.append(extra[0])
        for r, e in zip(rows, extra[1]):
            r.append(int(e))
    return cols, rows


def _residual_table(report: CheckReport):
    return ["case", "residual", "tolerance"], [[k, v, report.tolerance] for k, v in report.residuals.items()]


def check_simulate_levy(cfg: ExperimentConfig, pool) -> CheckOutcome:
    opts = cfg.options.get("simulate-levy", {})
    n = opts.get("n_paths", cfg.n_paths)
    n_steps = opts.get("n_steps", cfg.n_steps)
    ks = opts.get("k", [0.25, 0.5, 1.0, 1.5, 2.0])
    d = cfg.triplet.dim
    seeds = cfg.seeds(n)
    ends = np.array(list(pool.map(
        lambda sd: sample_levy_path(cfg.triplet, cfg.T, n_steps, sd, **cfg.sampling).values[-1], seeds
    )))
    res, rows = {}, []
    for kv in ks:
        k = np.zeros(d)
        k[0] = kv
        emp, se = empirical_char_fn(ends, k)
        exact = complex(np.exp(-cfg.T * levy_exponent(cfg.triplet, k)))
        z = abs(emp - exact) / se if se > 0 else (0.0 if abs(emp - exact) < 1e-12 else math.inf)
        res[f"k={kv:g}"] = z
        rows.append([kv, emp.real, emp.imag, exact.real, exact.imag, se, z])
    report = CheckReport("simulate-levy", res, 5.0, 0.0, {"n_paths": n})
    first = sample_levy_path(cfg.triplet, cfg.T, n_steps, seeds[0], **cfg.sampling)
    return CheckOutcome(report, {
        "simulate-levy.csv": (["k", "re_empirical", "im_empirical", "re_exact", "im_exact", "se", "z"], rows),
        "simulate-levy-path.csv": _path_table(first.grid, first.values, "v", ("is_jump", first.is_jump)),
    })


def check_integrate(cfg: ExperimentConfig, pool) -> CheckOutcome:
    opts = cfg.options.get("integrate", {})
    pairs = dyadic_pairs(opts.get("s", 0.25 * cfg.T), opts.get("kmin", 2), opts.get("kmax", 10), cfg.T)
    rep = moment_estimates_check(
        cfg.triplet, cfg.problem.sigma, cfg.T, pairs, opts.get("n_paths", cfg.n_paths),
        opts.get("theta", 0.5), n_steps=2 ** (opts.get("kmax", 10) + 1), seed=cfg.seed,
    )
    report = CheckReport(
        "integrate", {f"trend_{k}": v for k, v in rep.trend.items()}, rep.threshold, 0.0, rep.summary()
    )
    rows = [[r["component"], r["s"], r["t"], r["power"], r["moment"], r["ratio"], r["se"]] for r in rep.rows()]
    return CheckOutcome(report, {"integrate.csv": (["component", "s", "t", "power", "moment", "ratio", "se"], rows)})


def check_ibp(cfg: ExperimentConfig, pool) -> CheckOutcome:
    opts = cfg.options.get("ibp-check", {})
    dts = sorted(opts.get("dts", [1e-2, 5e-3, 1e-3]), reverse=True)
    s, t = opts.get("s", 0.25 * cfg.T), opts.get("t", cfg.T)
    min_slope = opts.get("min_slope", 0.4)
    fine = dts[-1]
    n_steps = int(round(cfg.T / fine))
    A, sigma = cfg.problem.A, cfg.problem.sigma

    def one(sd):
        L = sample_levy_path(cfg.triplet, cfg.T, n_steps, sd, **cfg.sampling)
        return [integration_by_parts_residual(A, sigma, L.coarsen(int(round(h / fine))), s, t) for h in dts]

    R = np.array(list(pool.map(one, cfg.seeds())))
    rms = np.sqrt((R**2).mean(axis=0))
    res = {}
    if rms.max() <= 1e-12:
        slope = math.inf
        res["slope"] = 0.0
    else:
        slope = float(np.polyfit(np.log(dts), np.log(np.maximum(rms, 1e-300)), 1)[0])
        res["slope"] = min_slope / slope if slope > 0 else math.inf
    C = float((R[:, 0] / math.sqrt(dts[0])).max())
    res["bound"] = float((R[:, -1] / (C * math.sqrt(dts[-1]))).max()) if C > 0 else 0.0
    report = CheckReport("ibp-check", res, 1.0, 0.0, {"slope": slope, "C": C})
    rows = [[h, r] for h, r in zip(dts, rms)]
    return CheckOutcome(report, {"ibp-check.csv": (["dt", "rms_residual"], rows)})


def check_solve(cfg: ExperimentConfig, pool) -> CheckOutcome:
    pb, x, s0 = cfg.problem, cfg.start, cfg.start_time

    def one(sd):
        L = cfg.driver(sd)
        e = solve_strong(pb, L, s0, x, "euler", cfg.dt, estimate_error=True)
        p = solve_strong(pb, L, s0, x, "picard", cfg.dt, estimate_error=True, **cfg.picard)
        tol = 5.0 * max(e.error_estimate, p.error_estimate) + 1e-12
        return e, sup_distance(e.path, p.path) / tol

    out = list(pool.map(one, cfg.seeds()))
    res = {f"seed{i}": r for i, (_, r) in enumerate(out)}
    report = CheckReport("solve", res, 1.0, max(o[0].error_estimate for o in out))
    first = out[0][0]
    return CheckOutcome(report, {
        "solve.csv": _path_table(first.grid, first.values, "z"),
        "solve-residuals.csv": _residual_table(report),
    })


def _per_seed(name: str, cfg: ExperimentConfig, pool, fn: Callable, n: int | None = None) -> CheckOutcome:
    reports = list(pool.map(lambda sd: fn(cfg.driver(sd)), cfg.seeds(n)))
    merged = CheckReport.merge(name, reports)
    return CheckOutcome(merged, {f"{name}.csv": _residual_table(merged)})


def check_davie(cfg, pool):
    return _per_seed("davie-check", cfg, pool, lambda L: davie_uniqueness_check(
        cfg.problem, L, cfg.start_time, cfg.start, cfg.dt,
        picard_tol=cfg.picard["tol"], damping=cfg.picard["damping"], max_iter=cfg.picard["max_iter"],
        factor=cfg.tolerance_factor,
    ))


def flow_grid(T: float, n: int):
    S = np.linspace(0.0, 0.4 * T, 5)
    R = np.linspace(0.4 * T, 0.6 * T, 5)
    Tg = np.linspace(0.6 * T, T, 5)
    triples = [(s, r, t) for s in S for r in R for t in Tg]
    X = [np.zeros(n)] + [v for v in np.eye(n)[: min(n, 2)]] + [-np.ones(n)]
    return triples, np.array(X[:4])


def check_flow(cfg, pool):
    triples, X = flow_grid(cfg.T, cfg.problem.n)
    # snap the triple grid to solver nodes
    snap = lambda v: round(v / cfg.dt) * cfg.dt
    triples = [(snap(s), snap(r), snap(t)) for s, r, t in triples]
    return _per_seed("flow-check", cfg, pool, lambda L: flow_property_check(
        cfg.problem, L, triples, X, cfg.dt, factor=cfg.tolerance_factor
    ))


def check_holder(cfg, pool):
    opts = cfg.options.get("holder-check", {})
    reports = list(pool.map(
        lambda sd: holder_flow_modulus_check(cfg.problem, cfg.driver(sd), m=opts.get("m"), dt=cfg.dt),
        cfg.seeds(),
    ))
    res = {f"seed{i}": r.max_residual for i, r in enumerate(reports)}
    report = CheckReport("holder-check", res, reports[0].tolerance)
    return CheckOutcome(report, {"holder-check.csv": _residual_table(report)})


def check_lp(cfg, pool):
    opts = cfg.options.get("lp-estimate", {})
    ps = opts.get("p", [2, 4])
    S = opts.get("S", [0.0, 0.25 * cfg.T, 0.5 * cfg.T, 0.75 * cfg.T])
    S = [round(s / cfg.dt) * cfg.dt for s in S]
    n = opts.get("n_paths", cfg.n_paths)
    pb = cfg.problem
    pairs = lipschitz_pairs(pb.n, scales=tuple(opts.get("scales", (0.5, 0.25, 0.125, 0.0625, 0.03125))))
    # zero drift with n = 1 has a closed form to compare against
    linear_scalar = pb.n == 1 and pb.drift.family == "zero"
    base = lp_lipschitz_estimate(pb, ps[0], S, pairs, n, seed=cfg.seed, dt=cfg.dt, estimate_bias=linear_scalar)
    res, rows = {}, []
    for p in ps:
        table = replace(base, p=p)
        stab = table.stability()
        for k, v in stab.residuals.items():
            res[f"p={p:g},{k}"] = v / stab.tolerance
        ratio, se, bias = table.ratio, table.se, table.bias
        for i, s in enumerate(S):
            for j, (x, y) in enumerate(pairs):
                row = [p, s, j, float(np.linalg.norm(np.asarray(y) - x)), ratio[i, j], se[i, j], ""]
                if linear_scalar:
                    exact = scalar_linear_ratio(float(pb.A[0, 0]), p, cfg.T, s)
                    allowed = 3.0 * se[i, j] + 2.0 * bias[i, j] + 1e-12
                    res[f"p={p:g},closed_form,s={s:g},pair{j}"] = abs(ratio[i, j] - exact) / allowed
                    row[-1] = exact
                rows.append(row)
    report = CheckReport("lp-estimate", res, 1.0, 0.0, {"constant": base.constant})
    return CheckOutcome(report, {"lp-estimate.csv": (["p", "s", "pair", "distance", "ratio", "se", "closed_form"], rows)})


def check_tail(cfg, pool):
    opts = cfg.options.get("tail-check", {})
    kmin, kmax = opts.get("kmin", 3), opts.get("kmax", 10)
    r = opts.get("r", 0.25 * cfg.T)
    pairs = [(r, r + cfg.T * 2.0**-k) for k in range(kmin, kmax + 1)]
    n = opts.get("n_paths", cfg.n_paths)
    pb = cfg.problem

    def paths():
        for sd in cfg.seeds(n):
            L = sample_levy_path(cfg.triplet, cfg.T, 2 ** (kmax + 1), sd, **cfg.sampling)
            yield modified_integral(pb.A, pb.sigma, L).total

    rep = tail_bound_check(paths(), pairs, opts.get("theta", 0.5))
    res = {f"gap=2^-{k}": float(p - e) for k, p, e in zip(range(kmin, kmax + 1), rep.prob, rep.envelope)}
    res.pop(f"gap=2^-{kmin}")
    report = CheckReport("tail-check", res, 0.0, 0.0, rep.summary())
    rows = [[a, b, abs(b - a), p, s, e] for (a, b), p, s, e in zip(rep.pairs, rep.prob, rep.se, rep.envelope)]
    return CheckOutcome(report, {"tail-check.csv": (["r", "s", "gap", "probability", "se", "envelope"], rows)})


def check_kinetic(cfg, pool):
    F, pb = cfg.force, cfg.problem
    d = F.d
    x0 = cfg.start

    def one(sd):
        W = cfg.driver(sd)
        block = solve_strong(pb, W, 0.0, x0, "euler", cfg.dt, estimate_error=True)
        expl = explicit_kinetic_solve(F, W, x0[:d], x0[d:], cfg.dt)
        dist = float(np.abs(block.values - expl.stacked()).max())
        return expl, dist / (cfg.tolerance_factor * block.error_estimate + 1e-12)

    out = list(pool.map(one, cfg.seeds()))
    res = {f"seed{i}": r for i, (_, r) in enumerate(out)}
    report = CheckReport("kinetic-demo", res, 1.0)
    e = out[0][0]
    cols = ["time"] + [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
    rows = [[t, *a, *b] for t, a, b in zip(e.t, e.x, e.v)]
    return CheckOutcome(report, {"kinetic-demo.csv": (cols, rows), "kinetic-demo-residuals.csv": _residual_table(report)})


RUNNERS: dict[str, Callable] = {
    "simulate-levy": check_simulate_levy,
    "integrate": check_integrate,
    "ibp-check": check_ibp,
    "solve": check_solve,
    "davie-check": check_davie,
    "flow-check": check_flow,
    "holder-check": check_holder,
    "lp-estimate": check_lp,
    "tail-check": check_tail,
    "kinetic-demo": check_kinetic,
}


class _SerialPool:
    def map(self, fn, items):
        return map(fn, items)


# ------------------------------------------------------------------ output
def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def run(cfg: ExperimentConfig, threads: int = 1) -> tuple[int, dict]:
    """Execute the selected checks and write artifacts; returns ``(exit_code, summary)``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"schema_version": SCHEMA_VERSION, "checks": {}}
    pool_cm = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    pool = pool_cm if pool_cm is not None else _SerialPool()
    try:
        for name in cfg.checks:
            try:
                outcome = RUNNERS[name](cfg, pool)
            except ValueError as exc:
                # library argument validation, triggered by check_options
                raise ConfigError(f"{name}: {exc}") from exc
            rep = outcome.report
            summary["checks"][name] = {
                "pass": rep.passed,
                "max_residual": _json_safe(rep.max_residual),
                "tolerance": _json_safe(rep.tolerance),
            }
            for fname, (header, rows) in sorted(outcome.tables.items()):
                _write_table(out / fname, header, rows)
    finally:
        if pool_cm is not None:
            pool_cm.shutdown()
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    ok = all(c["pass"] for c in summary["checks"].values())
    return (0 if ok else 1), summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levyflow", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", default="run", choices=["run", "schema"],
                    help="'run' executes checks (default); 'schema' prints the config schema")
    ap.add_argument("--config", type=Path, help="experiment config (JSON)")
    ap.add_argument("--seed", type=int, help="override the master seed")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for per-seed work")
    ap.add_argument("--check", action="append", choices=CHECKS,
                    help="run only this check (repeatable; overrides the config list)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2))
        return 0
    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        data = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(data, seed=args.seed, out=args.out, checks=args.check)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        code, summary = run(cfg, max(1, args.threads))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, entry in summary["checks"].items():
        status = "PASS" if entry["pass"] else "FAIL"
        print(f"{status} {name}: max_residual={entry['max_residual']} tolerance={entry['tolerance']}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
