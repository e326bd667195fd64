"""Strong solutions of ``dZ = b(t, Z) dt + A Z dt + sigma(t) dL`` for one noise path.

Writing ``Z = g + M - M_s`` with ``M = int sigma dL`` turns the SDE into the
integral equation

    g(t) = x + int_s^t btilde(v, g(v) + M_v - M_s) dv,   btilde(v, z) = b(v, z) + A z,

whose solution ``g`` is continuous; the noise only enters through the
argument of the drift. Both an explicit Euler recursion and a damped Picard
iteration solve it on the grid of the driver.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as _rng
from .additive_integral import ExpWeightedIntegrand, MatrixIntegrand, as_integrand, stochastic_integral
from .errors import PicardDivergenceError
from .levy_core import GeneratingTriplet
from .matrix_flow import MatrixExp
from .paths import CadlagPath

Drift = Callable[[object, np.ndarray], np.ndarray]


# ------------------------------------------------------------------ drifts
def _apply(E: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (E @ x[..., None])[..., 0]


@dataclass(frozen=True, eq=False)
class CertificateReport:
    max_quotient: float
    max_abs: float
    holder_const: float
    bound: float

    @property
    def passed(self) -> bool:
        return (
            self.max_quotient <= self.holder_const * (1 + 1e-6) + 1e-300
            and self.max_abs <= self.bound * (1 + 1e-12) + 1e-300
        )


@dataclass(frozen=True, eq=False)
class HolderField:
    """Bounded drift ``b(t, x)`` with certified sup-norm and Hölder data.

    ``func(t, x)`` must accept ``x`` of shape ``(..., n)`` and ``t`` either
    scalar or broadcastable to ``x.shape[:-1]``.
    """

    func: Drift
    n: int
    bound: float
    beta: float
    holder_const: float
    family: str = "custom"
    autonomous: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("Hölder exponent must lie in (0, 1]")
        if not (self.bound >= 0 and self.holder_const >= 0):
            raise ValueError("certificates must be non-negative")
        if not (math.isfinite(self.bound) and math.isfinite(self.holder_const)):
            raise ValueError("certificates must be finite")

    def __call__(self, t, x) -> np.ndarray:
        return self.func(t, np.asarray(x, dtype=float))

    # constructors
    @classmethod
    def zero(cls, n: int) -> "HolderField":
        return cls(lambda t, x: np.zeros_like(x), n, 0.0, 1.0, 0.0, "zero")

    @classmethod
    def constant(cls, c) -> "HolderField":
        c = np.atleast_1d(np.asarray(c, dtype=float)).copy()
        return cls(
            lambda t, x, _c=c: np.broadcast_to(_c, x.shape).copy(),
            c.size, float(np.linalg.norm(c)), 1.0, 0.0, "constant", params={"c": c.tolist()},
        )

    @classmethod
    def sine(cls, n: int, amplitude: float = 1.0) -> "HolderField":
        """Componentwise ``amplitude * sin(x)``: Lipschitz with constant ``amplitude``."""
        a = float(amplitude)
        return cls(
            lambda t, x: a * np.sin(x), n, abs(a) * math.sqrt(n), 1.0, abs(a), "sine",
            params={"amplitude": a},
        )

    def check_certificates(
        self, seed: int = 0, n_pairs: int = 10_000, radius: float = 3.0,
        t_slices=(0.0, 0.5, 1.0),
    ) -> CertificateReport:
        """Sample Hölder quotients and sup-norms over random pairs per time slice.

        Displacements are log-uniform between ``1e-6`` and ``2 radius`` so
        both small-scale and large-scale behaviour is probed.
        """
        rg = _rng.stream(seed, _rng.AUXILIARY, 7)
        qmax, amax = 0.0, 0.0
        for t in t_slices:
            x = rg.uniform(-radius, radius, size=(n_pairs, self.n))
            u = rg.standard_normal((n_pairs, self.n))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            h = np.exp(rg.uniform(math.log(1e-6), math.log(2 * radius), size=n_pairs))
            y = x + h[:, None] * u
            bx, by = self(t, x), self(t, y)
            dist = np.linalg.norm(x - y, axis=1)
            q = np.linalg.norm(bx - by, axis=1) / dist**self.beta
            qmax = max(qmax, float(q.max()))
            amax = max(amax, float(np.linalg.norm(bx, axis=1).max()), float(np.linalg.norm(by, axis=1).max()))
        return CertificateReport(qmax, amax, self.holder_const, self.bound)


@dataclass(frozen=True, eq=False)
class LocalHolderField:
    """Possibly unbounded drift with per-ball certificates.

    ``local_bound(r)`` bounds ``|b|`` on the ball of radius ``r`` and
    ``local_holder(r)`` bounds its ``beta``-Hölder seminorm there.
    """

    func: Drift
    n: int
    beta: float
    local_bound: Callable[[float], float]
    local_holder: Callable[[float], float]
    autonomous: bool = True

    def __call__(self, t, x):
        return self.func(t, np.asarray(x, dtype=float))

    @classmethod
    def linear(cls, n: int, beta: float = 1.0) -> "LocalHolderField":
        """``b(x) = x``: ``|b| <= r`` and ``[b]_beta <= (2r)^(1-beta)`` on the ball of radius ``r``."""
        return cls(lambda t, x: x.copy(), n, beta, lambda r: r, lambda r: (2.0 * r) ** (1.0 - beta))


def _smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 for u <= 0, 0 for u >= 1; its slope never exceeds 2."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f1 = np.where(u < 1.0, np.exp(-1.0 / np.where(u < 1.0, 1.0 - u, 1.0)), 0.0)
        f0 = np.where(u > 0.0, np.exp(-1.0 / np.where(u > 0.0, u, 1.0)), 0.0)
    return f1 / (f1 + f0)


SMOOTH_STEP_SLOPE = 2.0


def cutoff(x: np.ndarray, R: float, margin: float) -> np.ndarray:
    """``eta_R(x)``: equal to 1 on ``|x| <= R`` and to 0 on ``|x| >= R + margin``."""
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    return _smooth_step((r - R) / margin)


def localize_drift(b: LocalHolderField, R: float, margin: float = 1.0) -> HolderField:
    """Multiply ``b`` by a smooth cutoff and recompute its certificates.

    With ``B = sup|b|`` and ``H = [b]_beta`` on the ball of radius
    ``R + margin`` and ``lip = 2 / margin`` the slope of the cutoff, the
    product satisfies ``|eta b| <= B`` and
    ``[eta b]_beta <= H + max(1, lip) B``. The ``max(1, .)`` covers pairs
    farther apart than one, where the cutoff difference is bounded by 1
    rather than by ``lip |x - y|``.
    """
    if R <= 0 or margin <= 0:
        raise ValueError("radius and margin must be positive")
    rr = R + margin
    B, H = float(b.local_bound(rr)), float(b.local_holder(rr))
    lip = SMOOTH_STEP_SLOPE / margin

    def func(t, x, _b=b.func):
        return cutoff(x, R, margin)[..., None] * _b(t, x)

    return HolderField(
        func, b.n, B, b.beta, H + max(1.0, lip) * B, "localized", b.autonomous,
        params={"R": R, "margin": margin},
    )


# ------------------------------------------------------------------ problem
@dataclass(frozen=True, eq=False)
class SdeProblem:
    """``dZ = b(t, Z) dt + A Z dt + sigma(t) dL`` on ``[0, T]``."""

    n: int
    d: int
    A: np.ndarray
    sigma: MatrixIntegrand
    drift: HolderField
    T: float = 1.0
    triplet: GeneratingTriplet | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
        sigma = as_integrand(self.sigma)
        if A.shape != (self.n, self.n):
            raise ValueError(f"A must be {self.n}x{self.n}")
        if (sigma.n, sigma.d) != (self.n, self.d):
            raise ValueError(f"sigma must map R^{self.d} to R^{self.n}")
        if self.drift.n != self.n:
            raise ValueError("drift dimension does not match n")
        if self.triplet is not None and self.triplet.dim != self.d:
            raise ValueError("triplet dimension does not match d")
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        sigma.bound(self.T)  # raises when unbounded
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", sigma)

    @property
    def has_linear_part(self) -> bool:
        return bool(np.any(self.A))

    def tilde_drift(self) -> Drift:
        """``(t, z) -> b(t, z) + A z``."""
        b, A = self.drift.func, self.A
        if not self.has_linear_part:
            return b
        return lambda t, z: b(t, z) + z @ A.T

    def forcing(self, L: CadlagPath) -> CadlagPath:
        return stochastic_integral(self.sigma, L).total


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """Solution started from ``x`` at time ``s``, equal to ``x`` on ``[0, s]``."""

    s: float
    x: np.ndarray
    path: CadlagPath
    method: str
    dt: float
    iterations: int = 0
    error_estimate: float | None = None
    residual_history: tuple = ()

    @property
    def grid(self) -> np.ndarray:
        return self.path.grid

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    def to_csv(self, target) -> None:
        self.path.to_csv(target, value_prefix="z")


@dataclass(frozen=True, eq=False)
class IntegralSolution:
    """Grid solution ``g`` of the integral equation on ``[s0, T]``."""

    grid: np.ndarray
    g: np.ndarray
    method: str
    iterations: int
    residuals: np.ndarray
    residual_history: tuple = ()


# ------------------------------------------------------------------ kernels
def euler_recursion(f: Drift, grid: np.ndarray, Mrel: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Left-point recursion ``g_{k+1} = g_k + f(t_k, g_k + Mrel_k) dt_k``.

    ``Mrel`` has shape ``(N+1, ..., n)`` and is zero at the first node;
    ``x0`` broadcasts against ``Mrel[0]``. Returns ``g`` of the broadcast shape.
    """
    dt = np.diff(grid)
    shape = np.broadcast_shapes(np.shape(x0), Mrel.shape[1:])
    g = np.empty((grid.size,) + shape)
    g[0] = x0
    for k in range(dt.size):
        g[k + 1] = g[k] + f(grid[k], g[k] + Mrel[k]) * dt[k]
    return g


def picard_iteration(
    f: Drift,
    grid: np.ndarray,
    Mrel: np.ndarray,
    Mrel_left: np.ndarray,
    x0: np.ndarray,
    init: np.ndarray | None = None,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
):
    """Damped fixed-point iteration for the trapezoid-discretised equation.

    On each interval the drift is averaged between the right value at the
    left node and the left limit at the right node, so jumps of ``M`` sit on
    nodes and never inside a trapezoid. Returns ``(g, iterations, history)``
    where ``g`` is the last undamped image ``Phi(g)``.
    """
    dt = np.diff(grid)[:, None]
    t0, t1 = grid[:-1], grid[1:]
    x0 = np.asarray(x0, dtype=float)
    g = np.broadcast_to(x0, Mrel.shape).copy() if init is None else np.array(init, dtype=float)
    history: list[float] = []
    for it in range(1, max_iter + 1):
        F0 = f(t0, g[:-1] + Mrel[:-1])
        F1 = f(t1, g[1:] + Mrel_left[1:])
        phi = np.empty_like(g)
        phi[0] = x0
        phi[1:] = x0 + np.cumsum(0.5 * (F0 + F1) * dt, axis=0)
        res = float(np.abs(phi - g).max())
        history.append(res)
        if not math.isfinite(res) or res > 1e12:
            raise PicardDivergenceError("Picard iteration diverged", history)
        if res <= tol:
            return phi, it, history
        g = g + damping * (phi - g)
    raise PicardDivergenceError(
        f"Picard iteration did not reach tolerance {tol:g} in {max_iter} iterations", history
    )


def _relative(M: CadlagPath, i0: int) -> tuple[np.ndarray, np.ndarray]:
    base = M.values[i0]
    return M.values[i0:] - base, M.left_values[i0:] - base


def solve_integral_equation(
    tilde_drift: Drift,
    M: CadlagPath,
    s0: float,
    x,
    method: str = "euler",
    dt: float | None = None,
    *,
    init=None,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> IntegralSolution:
    """Solve ``g(t) = x + int_{s0}^t btilde(v, g(v) + M_v - M_{s0}) dv`` on the grid of ``M``.

    Parameters
    ----------
    tilde_drift : callable
        ``(t, z) -> R^n``, bounded.
    M : CadlagPath
        Forcing for one fixed noise realisation.
    method : {"euler", "picard"}
    dt : float, optional
        Step; must be an integer multiple of the grid spacing of ``M``.
    init : array_like, optional
        Initial Picard guess, either a point (constant guess) or a full path.

    Returns
    -------
    IntegralSolution
        ``residuals[k]`` is the defect of the method's own discrete equation
        at node ``k``.
    """
    if dt is not None:
        M = M.coarsen(step_factor(M, dt))
    i0 = M.index_of(s0)
    if i0 >= M.grid.size - 1:
        raise ValueError("start time must lie before the horizon")
    x = np.asarray(x, dtype=float)
    grid = M.grid[i0:]
    Mrel, Mleft = _relative(M, i0)
    if method == "euler":
        g = euler_recursion(tilde_drift, grid, Mrel, x)
        lead = (-1,) + (1,) * (g.ndim - 2)
        Mb = Mrel.reshape((Mrel.shape[0],) + (1,) * (g.ndim - Mrel.ndim) + Mrel.shape[1:])
        F = tilde_drift(grid[:-1].reshape(lead), g[:-1] + Mb[:-1])
        dtb = np.diff(grid).reshape(lead + (1,))
        res = np.zeros(grid.size)
        res[1:] = np.abs(np.diff(g, axis=0) - F * dtb).reshape(grid.size - 1, -1).max(axis=-1)
        return IntegralSolution(grid, g, "euler", 0, res)
    if method == "picard":
        if init is not None:
            init = np.asarray(init, dtype=float)
            if init.shape == x.shape:
                init = np.broadcast_to(init, Mrel.shape).copy()
        g, its, hist = picard_iteration(
            tilde_drift, grid, Mrel, Mleft, x, init, damping, tol, max_iter
        )
        F0 = tilde_drift(grid[:-1], g[:-1] + Mrel[:-1])
        F1 = tilde_drift(grid[1:], g[1:] + Mleft[1:])
        res = np.zeros(grid.size)
        res[1:] = np.abs(
            np.diff(g, axis=0) - 0.5 * (F0 + F1) * np.diff(grid)[:, None]
        ).max(axis=-1)
        return IntegralSolution(grid, g, "picard", its, res, tuple(hist))
    raise ValueError(f"unknown method {method!r}")


def step_factor(path: CadlagPath, dt: float) -> int:
    """Number of native uniform steps in one step of size ``dt``."""
    h = path.base_step
    q = dt / h
    f = int(round(q))
    if f < 1 or abs(f - q) > 1e-9 * max(1.0, q):
        raise ValueError(f"step {dt!r} is not an integer multiple of the native step {h!r}")
    return f


# ----------------------------------------------------------------- solving
def _assemble(M: CadlagPath, i0: int, x: np.ndarray, g: np.ndarray) -> CadlagPath:
    Mrel = M.values[i0:] - M.values[i0]
    vals = np.empty((M.grid.size, x.size))
    vals[:i0] = x
    vals[i0:] = g + Mrel
    mask = M.jump_index > i0
    return CadlagPath._trusted(M.grid, vals, M.jump_times[mask], M.jump_sizes[mask], M.base)


def _solve_on(problem: SdeProblem, Lc: CadlagPath, s: float, x, scheme: str, **kw):
    M = problem.forcing(Lc)
    sol = solve_integral_equation(problem.tilde_drift(), M, s, x, scheme, **kw)
    i0 = M.index_of(s)
    return _assemble(M, i0, np.asarray(x, dtype=float), sol.g), sol


def solve_strong(
    problem: SdeProblem,
    L: CadlagPath,
    s: float,
    x,
    scheme: str = "euler",
    dt: float | None = None,
    *,
    estimate_error: bool = False,
    **picard_kw,
) -> SolutionPath:
    """Solve the SDE from ``(s, x)`` along the driver ``L``.

    ``dt`` defaults to the native step of ``L`` and must be an integer
    multiple of it. With ``estimate_error`` the sup-distance to the same
    scheme at ``dt / 4`` (on the same driver) is reported as the scheme
    error; ``L`` must then resolve ``dt / 4``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (problem.n,):
        raise ValueError(f"start point must have shape ({problem.n},)")
    if not 0.0 <= s < problem.T:
        raise ValueError("start time must lie in [0, T)")
    if abs(L.T - problem.T) > 1e-9 * problem.T or L.dim != problem.d:
        raise ValueError("driver does not span the problem horizon or has the wrong dimension")
    if dt is None:
        dt = L.base_step
    factor = step_factor(L, dt)
    path, sol = _solve_on(problem, L.coarsen(factor), s, x, scheme, **picard_kw)
    err = None
    if estimate_error:
        if factor % 4:
            raise ValueError("error estimate needs a driver resolving dt / 4")
        ref, _ = _solve_on(problem, L.coarsen(factor // 4), s, x, scheme, **picard_kw)
        err = sup_distance(path, ref)
    return SolutionPath(s, x, path, scheme, dt, sol.iterations, err, sol.residual_history)


def sup_distance(a: CadlagPath, b: CadlagPath) -> float:
    """Max distance over the nodes of ``a`` (which must also be nodes of ``b``)."""
    idx = np.searchsorted(b.grid, a.grid)
    idx = np.clip(idx, 0, b.grid.size - 1)
    if not np.allclose(b.grid[idx], a.grid, rtol=0, atol=1e-12 * max(1.0, a.T)):
        raise ValueError("grids are not nested")
    return float(np.abs(a.values - b.values[idx]).max())


# --------------------------------------------------------- transformations
def transform_to_modified(problem: SdeProblem) -> SdeProblem:
    """Remove the linear term via ``U_t = exp(-tA) Z_t``.

    The modified problem has ``A = 0``, drift
    ``btilde(r, x) = exp(-rA) b(r, exp(rA) x)`` and integrand
    ``exp(-rA) sigma(r)``. Returns ``problem`` itself when ``A = 0``.
    """
    if not problem.has_linear_part:
        return problem
    fwd, bwd = MatrixExp(problem.A), MatrixExp(-problem.A)
    b = problem.drift
    T = problem.T
    e_plus, e_minus = fwd.norm_bound(T), bwd.norm_bound(T)

    def func(t, x, _b=b.func):
        t = np.asarray(t, dtype=float)
        return _apply(bwd.at(t), _b(t, _apply(fwd.at(t), x)))

    drift = HolderField(
        func, b.n, e_minus * b.bound, b.beta, e_minus * b.holder_const * e_plus**b.beta,
        f"modified:{b.family}", autonomous=False, params=dict(b.params),
    )
    return SdeProblem(
        problem.n, problem.d, np.zeros_like(problem.A),
        ExpWeightedIntegrand(problem.A, problem.sigma), drift, T, problem.triplet,
    )


def _map_path(A, path: CadlagPath, sign: float) -> CadlagPath:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.any(A):
        return path
    return path.apply(MatrixExp(sign * A).at(path.grid))


def to_U(A, path: CadlagPath) -> CadlagPath:
    """``t -> exp(-tA) Z_t``."""
    return _map_path(A, path, -1.0)


def to_Z(A, path: CadlagPath) -> CadlagPath:
    """``t -> exp(tA) U_t``."""
    return _map_path(A, path, 1.0)


def solve_via_modified(
    problem: SdeProblem, L: CadlagPath, s: float, x, scheme: str = "euler", dt: float | None = None,
    **kw,
) -> SolutionPath:
    """Solve the modified problem from ``exp(-sA) x`` and map back to ``Z``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mod = transform_to_modified(problem)
    u0 = MatrixExp(-problem.A)(s) @ x
    sol = solve_strong(mod, L, s, u0, scheme, dt, **kw)
    Z = to_Z(problem.A, sol.path)
    i0 = Z.index_of(s)
    vals = np.array(Z.values)
    vals[:i0] = x
    path = Z.with_values(vals, Z.jump_sizes)
    return dataclasses.replace(sol, x=x, path=path, method=f"modified-{scheme}")


def shift_solution(
    problem: SdeProblem, L: CadlagPath, s: float, x, scheme: str = "euler", dt: float | None = None,
    **kw,
) -> SolutionPath:
    """Solve from ``(s, x)`` by restarting time: drive from 0 with ``L_{s+.} - L_s``.

    Only valid for time-homogeneous drift, where the shifted driver has
    the same law and the solution is re-indexed by ``t -> t - s``.
    """
    if not problem.drift.autonomous:
        raise ValueError(
            "time shifting needs a time-homogeneous drift b(x); this drift depends on t"
        )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dt is None:
        dt = L.base_step
    Lc = L.coarsen(step_factor(L, dt))
    i0 = Lc.index_of(s)
    Ls = Lc.shifted(s)
    shifted = dataclasses.replace(problem, sigma=problem.sigma.shifted(Lc.grid[i0]), T=Ls.T)
    M = shifted.forcing(Ls)
    sol = solve_integral_equation(shifted.tilde_drift(), M, 0.0, x, scheme, **kw)
    vals = np.empty((Lc.grid.size, problem.n))
    vals[:i0] = x
    vals[i0:] = sol.g + M.values
    mask = Lc.jump_index > i0
    Mjumps = M.jump_sizes[M.jump_index > 0]
    path = CadlagPath._trusted(Lc.grid, vals, Lc.jump_times[mask], Mjumps, Lc.base)
    return SolutionPath(s, x, path, f"shifted-{scheme}", dt, sol.iterations, None, sol.residual_history)
