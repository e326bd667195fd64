"""Numerical checks of pathwise uniqueness and of the solution flow.

Every check works on one fixed driver path (except the Monte Carlo
Lipschitz estimate) and compares independent discrete constructions against
a tolerance expressed in units of the scheme error, the sup-distance between
a run at step ``dt`` and its rerun at ``dt / 4`` on the same driver.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import rng as _rng
from .levy_core import sample_levy_path
from .matrix_flow import MatrixExp
from .paths import CadlagPath
from .sde_solver import (
    SdeProblem,
    euler_recursion,
    solve_integral_equation,
    step_factor,
)

ATOL = 1e-12


@dataclass
class CheckReport:
    """Outcome of one check: ``passed`` iff the largest residual is within tolerance."""

    name: str
    residuals: dict[str, float]
    tolerance: float
    scheme_error: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return float(max(self.residuals.values(), default=0.0))

    @property
    def passed(self) -> bool:
        return bool(self.max_residual <= self.tolerance)

    def summary(self) -> dict:
        return {"pass": self.passed, "max_residual": self.max_residual, "tolerance": self.tolerance}

    def to_json(self) -> str:
        return json.dumps({"name": self.name, **self.summary(), "scheme_error": self.scheme_error}, sort_keys=True)

    def to_csv(self, target) -> None:
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "residual", "tolerance"])
            for case, r in self.residuals.items():
                w.writerow([case, repr(float(r)), repr(float(self.tolerance))])

    @staticmethod
    def merge(name: str, reports: Sequence["CheckReport"]) -> "CheckReport":
        """Combine per-seed reports; each case keeps its own margin to its tolerance."""
        res, tol = {}, 1.0
        for i, r in enumerate(reports):
            for case, v in r.residuals.items():
                # normalised residual: <= 1 exactly when the case passed
                res[f"{i}:{case}"] = v / r.tolerance if r.tolerance > 0 else (0.0 if v <= 0 else math.inf)
        scheme = max((r.scheme_error for r in reports), default=0.0)
        return CheckReport(name, res, tol, scheme, {"normalised": True, "n_reports": len(reports)})


def _forcing_at(problem: SdeProblem, L: CadlagPath, dt: float | None) -> CadlagPath:
    if dt is not None:
        L = L.coarsen(step_factor(L, dt))
    return problem.forcing(L)


def _default_dt(L: CadlagPath, refine: int = 4) -> float:
    return refine * L.base_step


def _sup_nodes(coarse_grid, coarse_vals, fine_grid, fine_vals) -> float:
    idx = np.searchsorted(fine_grid, coarse_grid)
    idx = np.clip(idx, 0, fine_grid.size - 1)
    return float(np.abs(coarse_vals - fine_vals[idx]).max())


# ---------------------------------------------------------------- uniqueness
def davie_uniqueness_check(
    problem: SdeProblem,
    L: CadlagPath,
    s0: float,
    x,
    dt: float | None = None,
    *,
    delta=None,
    picard_tol: float = 1e-10,
    damping: float = 0.5,
    max_iter: int = 10_000,
    factor: float = 10.0,
) -> CheckReport:
    """Solve the integral equation four ways on one driver and compare.

    (a) Euler at ``dt``, (b) Euler at ``dt/2``, (c) damped Picard from the
    constant guess ``x`` and (d) from ``x + delta``. The tolerance is
    ``factor`` times the Euler scheme error (``dt`` against ``dt/4``) plus a
    rounding floor. ``L`` must resolve ``dt / 4``; ``dt`` defaults to four
    native steps.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dt is None:
        dt = _default_dt(L)
    if delta is None:
        delta = np.ones(problem.n) / math.sqrt(problem.n)
    delta = np.asarray(delta, dtype=float)
    f = problem.tilde_drift()
    Ms = {q: _forcing_at(problem, L, dt / q) for q in (1, 2, 4)}
    a = solve_integral_equation(f, Ms[1], s0, x, "euler")
    b = solve_integral_equation(f, Ms[2], s0, x, "euler")
    q = solve_integral_equation(f, Ms[4], s0, x, "euler")
    kw = dict(damping=damping, tol=picard_tol, max_iter=max_iter)
    c = solve_integral_equation(f, Ms[1], s0, x, "picard", init=x, **kw)
    d = solve_integral_equation(f, Ms[1], s0, x, "picard", init=x + delta, **kw)
    sols = {"euler_dt": a, "euler_half": b, "picard_x": c, "picard_x_plus_delta": d}
    scheme = _sup_nodes(a.grid, a.g, q.grid, q.g)
    names = list(sols)
    res = {}
    for i, n1 in enumerate(names):
        for n2 in names[i + 1 :]:
            s1, s2 = sols[n1], sols[n2]
            if s1.grid.size <= s2.grid.size:
                res[f"{n1}|{n2}"] = _sup_nodes(s1.grid, s1.g, s2.grid, s2.g)
            else:
                res[f"{n1}|{n2}"] = _sup_nodes(s2.grid, s2.g, s1.grid, s1.g)
    return CheckReport(
        "davie-check", res, factor * scheme + ATOL, scheme,
        {"picard_iterations": [c.iterations, d.iterations], "delta_norm": float(np.linalg.norm(delta))},
    )


# ---------------------------------------------------------------------- flow
@dataclass(frozen=True, eq=False)
class FlowSample:
    """``psi[i, j, k] = psi(S[i], Tg[j], X[k])`` for one driver path."""

    seed: int | None
    S: np.ndarray
    Tg: np.ndarray
    X: np.ndarray
    psi: np.ndarray


def _flow_from(f, M: CadlagPath, i0: int, X: np.ndarray) -> np.ndarray:
    """Euler flow from node ``i0`` for a batch of start points; shape ``(N+1-i0, m, n)``."""
    Mrel = (M.values[i0:] - M.values[i0])[:, None, :]
    g = euler_recursion(f, M.grid[i0:], Mrel, X)
    return g + Mrel


def build_flow_sample(
    problem: SdeProblem, L: CadlagPath, S, Tg, X, dt: float | None = None, seed: int | None = None
) -> FlowSample:
    """Evaluate the Euler flow on a grid of start times, times and points."""
    M = _forcing_at(problem, L, dt)
    f = problem.tilde_drift()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    S = np.asarray(S, dtype=float)
    Tg = np.asarray(Tg, dtype=float)
    tidx = np.array([M.index_of(t) for t in Tg])
    psi = np.empty((S.size, Tg.size, X.shape[0], problem.n))
    for i, s in enumerate(S):
        i0 = M.index_of(s)
        Z = _flow_from(f, M, i0, X)
        for j, tj in enumerate(tidx):
            psi[i, j] = X if tj <= i0 else Z[tj - i0]
    return FlowSample(seed, S, Tg, X, psi)


def flow_property_check(
    problem: SdeProblem,
    L: CadlagPath,
    triples: Sequence[tuple[float, float, float]],
    X,
    dt: float | None = None,
    *,
    factor: float = 10.0,
) -> CheckReport:
    """Residual of ``psi(s,t,x) = psi(r,t,psi(s,r,x))`` on one grid.

    Both legs use the same forcing and grid. The tolerance is ``factor``
    times the largest scheme error of the flows started at the distinct
    ``s`` values.
    """
    if dt is None:
        dt = _default_dt(L)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    f = problem.tilde_drift()
    M = _forcing_at(problem, L, dt)
    Mf = _forcing_at(problem, L, dt / 4)
    cache: dict[int, np.ndarray] = {}

    def flow(i0):
        if i0 not in cache:
            cache[i0] = _flow_from(f, M, i0, X)
        return cache[i0]

    res = {}
    scheme = 0.0
    for s in sorted({tr[0] for tr in triples}):
        i0 = M.index_of(s)
        fine = _flow_from(f, Mf, Mf.index_of(s), X)
        coarse = flow(i0)
        fidx = np.searchsorted(Mf.grid, M.grid[i0:])
        scheme = max(scheme, float(np.abs(coarse - fine[fidx - Mf.index_of(s)]).max()))
    restarts: dict[tuple[int, int], np.ndarray] = {}
    for s, r, t in triples:
        if not s <= r <= t:
            raise ValueError(f"need s <= r <= t, got {(s, r, t)}")
        i_s, i_r, i_t = M.index_of(s), M.index_of(r), M.index_of(t)
        direct = flow(i_s)[i_t - i_s]
        if (i_s, i_r) not in restarts:
            mid = flow(i_s)[i_r - i_s]
            Mrel = (M.values[i_r:] - M.values[i_r])[:, None, :]
            restarts[i_s, i_r] = euler_recursion(f, M.grid[i_r:], Mrel, mid) + Mrel
        restarted = restarts[i_s, i_r]
        res[f"s={s:.6g},r={r:.6g},t={t:.6g}"] = float(np.abs(direct - restarted[i_t - i_r]).max())
    return CheckReport("flow-check", res, factor * scheme + ATOL, scheme)


# -------------------------------------------------------------------- Hölder
def modulus_pairs(n: int, radius: float = 1.0, ks=range(1, 9), per_rung: int = 64, seed: int = 0):
    """Pairs ``(x, x + 2^-k u)`` with ``x`` uniform in a ball and ``u`` a unit vector."""
    rg = _rng.stream(seed, _rng.AUXILIARY, 21)
    out = []
    for k in ks:
        x = rg.standard_normal((per_rung, n))
        x *= (radius * rg.uniform(size=(per_rung, 1)) ** (1.0 / n)) / np.linalg.norm(x, axis=1, keepdims=True)
        u = rg.standard_normal((per_rung, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        out.extend(zip(x, x + 2.0**-k * u))
    return out


def holder_flow_modulus_check(
    problem: SdeProblem,
    L: CadlagPath,
    pairs=None,
    m: int | None = None,
    *,
    s: float = 0.0,
    dt: float | None = None,
    threshold: float = 0.5,
    quantile: float = 0.99,
) -> CheckReport:
    """Trend test for the weighted Hölder modulus of ``x -> psi(s, ., x)``.

    For each pair the ratio
    ``sup_t |psi(s,t,x) - psi(s,t,y)| / (|x-y|^{(m-2n)/m} max(max(|x|,|y|)^{(2n+1)/m}, 1))``
    is computed; pairs are grouped by dyadic scale of ``|x - y|`` and the
    residual is the Spearman correlation between the per-scale quantile and
    ``1/|x - y|``.
    """
    n = problem.n
    m = 4 * n + 1 if m is None else int(m)
    if m <= 2 * n:
        raise ValueError("m must exceed 2n")
    if pairs is None:
        pairs = modulus_pairs(n)
    X = np.array([p[0] for p in pairs], dtype=float)
    Y = np.array([p[1] for p in pairs], dtype=float)
    dist = np.linalg.norm(X - Y, axis=1)
    keep = dist > 0
    X, Y, dist = X[keep], Y[keep], dist[keep]
    M = _forcing_at(problem, L, dt)
    f = problem.tilde_drift()
    i0 = M.index_of(s)
    Z = _flow_from(f, M, i0, np.vstack([X, Y]))
    sup = np.linalg.norm(Z[:, : X.shape[0]] - Z[:, X.shape[0] :], axis=-1).max(axis=0)
    big = np.maximum(np.linalg.norm(X, axis=1), np.linalg.norm(Y, axis=1))
    weight = dist ** ((m - 2 * n) / m) * np.maximum(big ** ((2 * n + 1) / m), 1.0)
    ratio = sup / weight
    rung = np.round(-np.log2(dist)).astype(int)
    levels = np.unique(rung)
    q = np.array([np.quantile(ratio[rung == k], quantile) for k in levels])
    scale = 2.0 ** (-levels.astype(float))
    if levels.size < 3 or np.ptp(q) == 0:
        rho = 0.0
    else:
        rho = float(stats.spearmanr(q, 1.0 / scale).statistic)
    return CheckReport(
        "holder-check", {"spearman": rho}, threshold, 0.0,
        {"m": m, "scales": scale.tolist(), "quantiles": q.tolist(), "max_ratio": float(ratio.max())},
    )


# ------------------------------------------------------------------ càdlàg
def cadlag_in_s_probe(
    problem: SdeProblem,
    L: CadlagPath,
    s_star: float,
    ladder=range(2, 9),
    X=None,
    *,
    dt: float | None = None,
    radius: float = 1.0,
    decay: float = 0.5,
) -> CheckReport:
    """Gaps between flows started near ``s_star`` and the flow started at it.

    Right gaps compare ``psi(r_m, ., x)`` with ``psi(s*, ., x)`` for
    ``r_m = s* + 2^-m``; left gaps compare ``psi(l_m, ., x)`` for
    ``l_m = s* - 2^-m`` with ``psi(s*, ., x)`` and with the left-limit field
    ``psi(s*-, t, x) = psi(s*, t, x + dM_{s*})`` (``x`` before ``s*``).
    Start times are snapped to the outermost grid node within ``2^-m`` of
    ``s*`` on each side; rungs that add no new node are skipped.
    The residual is the largest ratio of finest to coarsest gap among the
    right gaps and the left-limit gaps; both must shrink by ``decay``.
    """
    M = _forcing_at(problem, L, dt)
    f = problem.tilde_drift()
    n = problem.n
    if X is None:
        X = np.vstack([np.zeros(n), radius * np.eye(n), -radius * np.eye(n)])
    X = np.atleast_2d(np.asarray(X, dtype=float))
    i_star = M.index_of(s_star)
    jump = M.jumps_dense[i_star]
    g = M.grid
    base = _flow_from(f, M, i_star, X)  # psi(s*, t, x) for t >= s*
    left_lim = _flow_from(f, M, i_star, X + jump)

    def full(i0, start, flow):
        out = np.broadcast_to(start, (g.size,) + start.shape).copy()
        out[i0:] = flow
        return out

    psi_star = full(i_star, X, base)
    psi_left = full(i_star, X, left_lim)
    right, left, left_to_limit, used = [], [], [], []
    seen = set()
    for m in ladder:
        h = 2.0**-m
        # nearest nodes within distance h of s* on either side
        ir = int(np.searchsorted(g, s_star + h + 1e-12, side="right")) - 1
        il = int(np.searchsorted(g, s_star - h - 1e-12))
        if ir <= i_star or il >= i_star or (ir, il) in seen:
            continue  # rung finer than the grid around s*
        seen.add((ir, il))
        used.append(m)
        pr = full(ir, X, _flow_from(f, M, ir, X))
        pl = full(il, X, _flow_from(f, M, il, X))
        right.append(float(np.linalg.norm(pr - psi_star, axis=-1).max()))
        left.append(float(np.linalg.norm(pl - psi_star, axis=-1).max()))
        left_to_limit.append(float(np.linalg.norm(pl - psi_left, axis=-1).max()))
    if len(used) < 2:
        raise ValueError("approach ladder does not fit on the grid around s*")

    def shrink(gaps):
        if gaps[0] <= ATOL:
            return 0.0
        return gaps[-1] / gaps[0]

    res = {"right": shrink(right), "left_limit": shrink(left_to_limit)}
    return CheckReport(
        "cadlag-probe", res, decay, 0.0,
        {
            "ladder": used, "right_gaps": right, "left_gaps": left,
            "left_limit_gaps": left_to_limit, "jump_norm": float(np.linalg.norm(jump)),
        },
    )


# ----------------------------------------------------------- L^p Lipschitz
def lipschitz_pairs(n: int, centers=None, scales=(0.5, 0.25, 0.125, 0.0625, 0.03125), seed: int = 0):
    """Pairs ``(x, x + h u)`` over a few centres, directions and scales ``h``."""
    rg = _rng.stream(seed, _rng.AUXILIARY, 31)
    if centers is None:
        centers = np.vstack([np.zeros(n), rg.uniform(-1, 1, size=(2, n))])
    out = []
    for c in np.atleast_2d(centers):
        u = rg.standard_normal(n)
        u /= np.linalg.norm(u)
        for h in scales:
            out.append((np.array(c, float), np.array(c, float) + h * u))
    return out


@dataclass
class LipschitzTable:
    """Monte Carlo estimates of ``E sup_t |Z^{s,x} - Z^{s,y}|^p / |x - y|^p``.

    ``samples[path, i, j] = sup_t |Z^{S[i], x_j} - Z^{S[i], y_j}| / |x_j - y_j|``
    so the table for any exponent is ``mean(samples**p)``.
    """

    p: float
    S: np.ndarray
    pairs: list
    samples: np.ndarray
    dt: float
    fine_samples: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.samples.shape[0]

    def bias_for(self, p: float) -> np.ndarray | None:
        """Entrywise ``|ratio at dt - ratio at dt/4|``, if the fine run was kept."""
        if self.fine_samples is None:
            return None
        return np.abs(self.ratio_for(p) - (self.fine_samples**p).mean(axis=0))

    @property
    def bias(self) -> np.ndarray | None:
        return self.bias_for(self.p)

    def ratio_for(self, p: float) -> np.ndarray:
        return (self.samples**p).mean(axis=0)

    def se_for(self, p: float) -> np.ndarray:
        v = self.samples**p
        return v.std(axis=0, ddof=1) / math.sqrt(v.shape[0]) if v.shape[0] > 1 else np.zeros(v.shape[1:])

    @property
    def ratio(self) -> np.ndarray:
        return self.ratio_for(self.p)

    @property
    def se(self) -> np.ndarray:
        return self.se_for(self.p)

    @property
    def constant(self) -> float:
        return float(self.ratio.max())

    @property
    def constant_se(self) -> float:
        i = np.unravel_index(np.argmax(self.ratio), self.ratio.shape)
        return float(self.se[i])

    @property
    def levels(self) -> np.ndarray:
        """Dyadic scale index ``round(-log2 |x - y|)`` of each pair."""
        d = np.array([np.linalg.norm(np.asarray(y) - np.asarray(x)) for x, y in self.pairs])
        return np.round(-np.log2(d)).astype(int)

    def _excess(self, entries_a, entries_b) -> float:
        """Standardised excess of the max over ``entries_a`` above the max over ``entries_b``.

        The two maximising entries are compared through their paired
        per-path difference, so common random numbers reduce the noise.
        """
        r = self.ratio
        a = max(entries_a, key=lambda e: r[e])
        b = max(entries_b, key=lambda e: r[e])
        if a == b:
            return 0.0
        diff = self.samples[(slice(None),) + a] ** self.p - self.samples[(slice(None),) + b] ** self.p
        se = diff.std(ddof=1) / math.sqrt(diff.size) if diff.size > 1 else 0.0
        floor = 1e-12 * max(1.0, abs(r[b]))
        return float(max(diff.mean() - floor, 0.0) / (se + floor))

    def stability(self, sigmas: float = 3.0) -> CheckReport:
        """Check that the estimated constant (the table maximum) is stable.

        In ``s``: the maximum over pairs at each later start time must not
        exceed the maximum at the first start time. In scale: the maximum
        over the finest ``|x - y|`` level must not exceed the maximum over
        all coarser levels. Residuals are standardised excesses (paired
        differences over their standard error); the tolerance is ``sigmas``.
        """
        n_s, n_p = self.samples.shape[1:]
        res = {}
        first = [(0, j) for j in range(n_p)]
        for i in range(1, n_s):
            res[f"s={self.S[i]:.6g}"] = self._excess([(i, j) for j in range(n_p)], first)
        lv = self.levels
        finest = lv.max()
        fine = [(i, j) for i in range(n_s) for j in range(n_p) if lv[j] == finest]
        coarse = [(i, j) for i in range(n_s) for j in range(n_p) if lv[j] < finest]
        if fine and coarse:
            res[f"scale=2^-{finest}"] = self._excess(fine, coarse)
        return CheckReport(
            "lp-estimate", res, sigmas, 0.0,
            {"constant": self.constant, "constant_se": self.constant_se, "p": self.p},
        )


def _sup_differences(f, grid, Mrel, i0, X, Y):
    """``sup_{t >= t_i0} |Z^x - Z^y|`` by a joint Euler run; Mrel is ``(N+1, P, 1, n)``."""
    dt = np.diff(grid)
    m = X.shape[0]
    Z = np.broadcast_to(np.vstack([X, Y]), (Mrel.shape[1], 2 * m, X.shape[1])).copy()
    sup = np.linalg.norm(X - Y, axis=1)[None, :].repeat(Mrel.shape[1], axis=0)
    dM = np.diff(Mrel, axis=0)
    for k in range(i0, dt.size):
        Z = Z + f(grid[k], Z) * dt[k] + dM[k]
        np.maximum(sup, np.linalg.norm(Z[:, :m] - Z[:, m:], axis=-1), out=sup)
    return sup


def lp_lipschitz_estimate(
    problem: SdeProblem,
    p: float,
    S: Sequence[float],
    pairs,
    n_paths: int,
    *,
    seed: int = 0,
    dt: float = 1e-3,
    batch: int = 500,
    estimate_bias: bool = False,
) -> LipschitzTable:
    """Monte Carlo table of scaled ``L^p`` distances between solutions.

    All start points share each driver path (common random numbers). Paths
    without jumps share one grid and are simulated in vectorised batches.
    With ``estimate_bias`` the table is recomputed at ``dt / 4`` on the same
    drivers and kept, so :meth:`LipschitzTable.bias_for` is available.
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    if problem.triplet is None:
        raise ValueError("the problem needs a driving triplet for Monte Carlo")
    X = np.array([q[0] for q in pairs], dtype=float)
    Y = np.array([q[1] for q in pairs], dtype=float)
    dist = np.linalg.norm(X - Y, axis=1)
    if np.any(dist == 0):
        raise ValueError("pairs must consist of distinct points")
    S = np.asarray(S, dtype=float)
    refine = 4 if estimate_bias else 1
    n_steps = int(round(problem.T / dt)) * refine
    f = problem.tilde_drift()
    out = {q: np.empty((n_paths, S.size, X.shape[0])) for q in ((1, 4) if estimate_bias else (1,))}
    seeds = _rng.ensemble_seeds(seed, n_paths)
    gaussian_only = not problem.triplet.has_jumps
    start = 0
    while start < n_paths:
        stop = min(n_paths, start + (batch if gaussian_only else 1))
        Ls = [sample_levy_path(problem.triplet, problem.T, n_steps, sd) for sd in seeds[start:stop]]
        for q in out:
            fac = refine // q
            Ms = [problem.forcing(L.coarsen(fac)) for L in Ls]
            grid = Ms[0].grid
            for i, s in enumerate(S):
                i0 = Ms[0].index_of(s)
                Mrel = np.stack([Mk.values - Mk.values[i0] for Mk in Ms], axis=1)[:, :, None, :]
                sup = _sup_differences(f, grid, Mrel, i0, X, Y)
                out[q][start:stop, i] = sup / dist
        start = stop
    return LipschitzTable(p, S, list(pairs), out[1], dt, out.get(4))


def scalar_linear_ratio(a: float, p: float, T: float, s: float) -> float:
    """``sup_{s<=t<=T} exp(p a (t - s))`` for ``dZ = a Z dt + dL``."""
    return math.exp(max(0.0, p * a * (T - s)))


def linear_flow_factor(A, t: float) -> float:
    return float(np.linalg.norm(MatrixExp(A)(t), 2))
