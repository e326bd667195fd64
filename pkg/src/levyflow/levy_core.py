"""Lévy laws given by their generating triplet, and path sampling.

A law is described by a Gaussian covariance ``Q``, zero drift and a jump
measure built from a small set of parametric families. Paths are sampled as
the sum of three independent components: compensated small jumps, a Gaussian
part and a compound Poisson process of jumps with norm above one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np
from scipy import integrate, special, stats

from . import rng as _rng
from .errors import QuadratureError
from .paths import CadlagPath, refine_grid

QUAD_TOL = 1e-7


def _check_quad(value: float, abserr: float, what: str) -> float:
    if not np.isfinite(value) or abserr > QUAD_TOL * max(1.0, abs(value)):
        raise QuadratureError(f"quadrature for {what} did not converge", abserr)
    return value


def _sphere_directions(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    if d == 1:
        return rng.choice(np.array([-1.0, 1.0]), size=(m, 1))
    g = rng.standard_normal((m, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_average(z: float, d: int) -> float:
    """Average of ``cos(<k, u>)`` over unit vectors ``u`` with ``|k| = z``."""
    if d == 1:
        return math.cos(z)
    if z == 0.0:
        return 1.0
    nu = d / 2.0 - 1.0
    return float(special.gamma(d / 2.0) * (2.0 / z) ** nu * special.jv(nu, z))


# ---------------------------------------------------------------- jump laws
@dataclass(frozen=True)
class PointJumps:
    """Every jump equals ``value``."""

    value: tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(a) for a in np.atleast_1d(self.value))
        if not v or not all(math.isfinite(a) for a in v):
            raise ValueError("point jump must be a finite non-empty vector")
        if all(a == 0.0 for a in v):
            raise ValueError("a jump of size zero is not a jump (nu({0}) must vanish)")
        object.__setattr__(self, "value", v)

    @property
    def dim(self) -> int:
        return len(self.value)

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return np.tile(np.asarray(self.value), (m, 1))

    def char(self, k: np.ndarray) -> complex:
        return complex(np.exp(1j * np.dot(k, self.value)))

    def truncated_mean(self) -> np.ndarray:
        v = np.asarray(self.value)
        return v if np.linalg.norm(v) <= 1.0 else np.zeros_like(v)

    def tail_moment(self, theta: float) -> float:
        r = float(np.linalg.norm(self.value))
        return r**theta if r > 1.0 else 0.0


@dataclass(frozen=True)
class NormalJumps:
    """Gaussian jumps ``N(mean, std^2 I)``; in dimension above one the mean must be zero."""

    mean: tuple[float, ...]
    std: float

    def __post_init__(self):
        m = tuple(float(a) for a in np.atleast_1d(self.mean))
        if not (self.std > 0 and math.isfinite(self.std)):
            raise ValueError("std must be positive and finite")
        if len(m) > 1 and any(a != 0.0 for a in m):
            raise ValueError("multivariate normal jumps are supported with zero mean only")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", float(self.std))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng, m):
        return np.asarray(self.mean) + self.std * rng.standard_normal((m, self.dim))

    def char(self, k):
        k = np.asarray(k, dtype=float)
        return complex(np.exp(1j * np.dot(k, self.mean) - 0.5 * self.std**2 * np.dot(k, k)))

    def truncated_mean(self) -> np.ndarray:
        if self.dim > 1:
            return np.zeros(self.dim)
        mu, s = self.mean[0], self.std
        a, b = (-1.0 - mu) / s, (1.0 - mu) / s
        mass = stats.norm.cdf(b) - stats.norm.cdf(a)
        return np.array([mu * mass + s * (stats.norm.pdf(a) - stats.norm.pdf(b))])

    def tail_moment(self, theta: float) -> float:
        s = self.std
        if self.dim == 1:
            pdf = stats.norm(self.mean[0], s).pdf
            total = 0.0
            for lo, hi, sign in ((1.0, np.inf, 1.0), (-np.inf, -1.0, -1.0)):
                val, err = integrate.quad(lambda y: (sign * y) ** theta * pdf(y), lo, hi)
                total += _check_quad(val, err, "normal tail moment")
            return total
        chi = stats.chi(self.dim)
        val, err = integrate.quad(lambda r: r**theta * chi.pdf(r), 1.0 / s, np.inf)
        return s**theta * _check_quad(val, err, "normal tail moment")


@dataclass(frozen=True)
class ParetoJumps:
    """Symmetric heavy-tailed jumps: radius Pareto(index, scale), uniform direction.

    ``P(|Y| > r) = (scale / r)^index`` for ``r >= scale``; moments of order
    ``theta`` exist exactly when ``theta < index``.
    """

    index: float
    scale: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (self.index > 0 and self.scale > 0 and self.dim >= 1):
            raise ValueError("Pareto jumps need index > 0, scale > 0, dim >= 1")

    def sample(self, rng, m):
        r = self.scale * rng.uniform(size=m) ** (-1.0 / self.index)
        return r[:, None] * _sphere_directions(rng, m, self.dim)

    def char(self, k):
        z = float(np.linalg.norm(k))
        if z == 0.0:
            return 1.0 + 0.0j
        a, xm = self.index, self.scale
        if self.dim == 1:
            # oscillatory Fourier integral over [xm, inf)
            val, err = integrate.quad(
                lambda r: a * xm**a * r ** (-a - 1.0), xm, np.inf, weight="cos", wvar=z, epsabs=1e-11, limlst=200
            )
            return complex(_check_quad(val, err, "Pareto characteristic function"))
        val, err = integrate.quad(
            lambda r: sphere_average(z * r, self.dim) * a * xm**a * r ** (-a - 1.0),
            xm, np.inf, limit=500,
        )
        return complex(_check_quad(val, err, "Pareto characteristic function"))

    def truncated_mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def tail_moment(self, theta: float) -> float:
        if theta >= self.index:
            return math.inf
        a, xm = self.index, self.scale
        r0 = max(1.0, xm)
        return a * xm**a * r0 ** (theta - a) / (a - theta)


JumpLaw = Union[PointJumps, NormalJumps, ParetoJumps]
JUMP_LAWS = {"point": PointJumps, "normal": NormalJumps, "pareto": ParetoJumps}


# ------------------------------------------------------ measure components
@dataclass(frozen=True)
class CompoundPoisson:
    """Finite jump measure ``intensity * law``."""

    intensity: float
    jumps: JumpLaw

    def __post_init__(self):
        if not (self.intensity > 0 and math.isfinite(self.intensity)):
            raise ValueError("intensity must be positive and finite")

    @property
    def dim(self) -> int:
        return self.jumps.dim

    def exponent(self, k: np.ndarray) -> complex:
        lam = self.intensity
        return -lam * (self.jumps.char(k) - 1.0 - 1j * np.dot(k, self.jumps.truncated_mean()))

    def compensator_rate(self) -> np.ndarray:
        return self.intensity * self.jumps.truncated_mean()

    def integrability(self) -> float:
        # integral of min(1, |x|^2) is at most the total mass
        return self.intensity

    def theta_moment(self, theta: float) -> float:
        return self.intensity * self.jumps.tail_moment(theta)

    def sample(self, rng: np.random.Generator, T: float, epsilon: float):
        count = rng.poisson(self.intensity * T)
        times = T - T * rng.uniform(size=count)  # uniform on (0, T]
        return times, self.jumps.sample(rng, count)


@dataclass(frozen=True)
class SmallJumpStable:
    """Isotropic stable-like jumps restricted to ``|x| <= 1``.

    Radial density ``scale * r^(-1-alpha)`` on ``(0, 1]`` with a uniform
    direction; the measure is symmetric so it needs no compensating drift.
    """

    alpha: float
    scale: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ValueError("stability index must lie in (0, 2)")
        if not (self.scale > 0 and self.dim >= 1):
            raise ValueError("scale must be positive and dim >= 1")

    def exponent(self, k: np.ndarray) -> complex:
        z = float(np.linalg.norm(k))
        if z == 0.0:
            return 0.0j
        a, d = self.alpha, self.dim
        val, err = integrate.quad(
            lambda r: (1.0 - sphere_average(z * r, d)) * r ** (-1.0 - a), 0.0, 1.0, limit=200
        )
        return complex(self.scale * _check_quad(val, err, "stable exponent"))

    def compensator_rate(self) -> np.ndarray:
        return np.zeros(self.dim)

    def integrability(self) -> float:
        return self.scale / (2.0 - self.alpha)

    def theta_moment(self, theta: float) -> float:
        return 0.0

    def rate_above(self, epsilon: float) -> float:
        """Mass of ``{epsilon < |x| <= 1}``."""
        a = self.alpha
        return self.scale * (epsilon ** (-a) - 1.0) / a

    def second_moment_below(self, epsilon: float) -> float:
        """``int_{|x| <= epsilon} |x|^2 nu(dx)``."""
        return self.scale * epsilon ** (2.0 - self.alpha) / (2.0 - self.alpha)

    def sample(self, rng: np.random.Generator, T: float, epsilon: float):
        count = rng.poisson(self.rate_above(epsilon) * T)
        times = T - T * rng.uniform(size=count)
        a = self.alpha
        u = rng.uniform(size=count)
        r = (epsilon ** (-a) - u * (epsilon ** (-a) - 1.0)) ** (-1.0 / a)
        return times, r[:, None] * _sphere_directions(rng, count, self.dim)


MeasureComponent = Union[CompoundPoisson, SmallJumpStable]


# ------------------------------------------------------------------ triplet
def _psd_factor(Q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    w, V = np.linalg.eigh(Q)
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"Q is not positive semidefinite (min eigenvalue {w.min():.3e})")
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class GeneratingTriplet:
    """Law of a Lévy process with zero drift.

    Parameters
    ----------
    dim : int
        Dimension of the process.
    Q : array_like, optional
        Gaussian covariance (defaults to zero).
    levy_measure : component or sequence of components, optional
        ``None``, a single :class:`CompoundPoisson` / :class:`SmallJumpStable`,
        or a sequence of them (their sum).
    """

    dim: int
    Q: np.ndarray | None = None
    levy_measure: Sequence[MeasureComponent] | MeasureComponent | None = ()
    factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValueError("dim must be positive")
        Q = np.zeros((d, d)) if self.Q is None else np.array(self.Q, dtype=float).reshape(d, d)
        if not np.all(np.isfinite(Q)) or not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
            raise ValueError("Q must be a finite symmetric matrix")
        factor = _psd_factor(Q)
        comps = self.levy_measure
        if comps is None:
            comps = ()
        elif isinstance(comps, (CompoundPoisson, SmallJumpStable)):
            comps = (comps,)
        comps = tuple(comps)
        for c in comps:
            if not isinstance(c, (CompoundPoisson, SmallJumpStable)):
                raise TypeError(f"unsupported Lévy measure component {c!r}")
            if c.dim != d:
                raise ValueError(f"measure component of dimension {c.dim} in a {d}-dimensional triplet")
        for name, val in (("dim", d), ("Q", Q), ("levy_measure", comps), ("factor", factor)):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def drift(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def has_jumps(self) -> bool:
        return bool(self.levy_measure)

    @property
    def is_gaussian_free(self) -> bool:
        return not np.any(self.Q)

    def integrability(self) -> float:
        """Closed-form bound on ``int min(1, |x|^2) nu(dx)``."""
        return float(sum(c.integrability() for c in self.levy_measure))

    def compensator_rate(self) -> np.ndarray:
        """``int_{|x|<=1} x nu(dx)`` over the finite-activity components."""
        out = np.zeros(self.dim)
        for c in self.levy_measure:
            out = out + c.compensator_rate()
        return out

    @classmethod
    def brownian(cls, dim: int = 1, variance: float = 1.0) -> "GeneratingTriplet":
        return cls(dim, variance * np.eye(dim))


# --------------------------------------------------------------- functions
def _as_vector(k, d: int) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.shape != (d,):
        raise ValueError(f"frequency must have shape ({d},), got {k.shape}")
    return k


def levy_exponent(triplet: GeneratingTriplet, k) -> complex:
    """Characteristic exponent ``phi`` with ``E exp(i<k, L_t>) = exp(-t phi(k))``."""
    k = _as_vector(k, triplet.dim)
    out = 0.5 * float(k @ triplet.Q @ k) + 0.0j
    for c in triplet.levy_measure:
        out += c.exponent(k)
    return complex(out)


@dataclass(frozen=True)
class ThetaMoment:
    finite: bool
    value: float


def theta_moment(triplet: GeneratingTriplet, theta: float) -> ThetaMoment:
    """Large-jump moment ``int_{|x|>1} |x|^theta nu(dx)``."""
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    value = float(sum(c.theta_moment(theta) for c in triplet.levy_measure))
    return ThetaMoment(math.isfinite(value), value)


def _brownian_fill(rng_base, rng_fill, factor, base_grid, grid, base_mask) -> np.ndarray:
    """Brownian motion with covariance ``factor @ factor.T`` per unit time.

    Values at ``base_grid`` come from ``rng_base`` alone; extra nodes of
    ``grid`` are filled with Brownian bridges from ``rng_fill``, so adding
    nodes never changes the base values.
    """
    d = factor.shape[0]
    dt = np.diff(base_grid)
    z = rng_base.standard_normal((dt.size, d))
    base_vals = np.vstack([np.zeros((1, d)), np.cumsum(np.sqrt(dt)[:, None] * z @ factor.T, axis=0)])
    if grid.size == base_grid.size:
        return base_vals
    # free Brownian path on the full grid, then pin it to the base values
    ddt = np.diff(grid)
    w = rng_fill.standard_normal((ddt.size, d))
    free = np.vstack([np.zeros((1, d)), np.cumsum(np.sqrt(ddt)[:, None] * w @ factor.T, axis=0)])
    bidx = np.flatnonzero(base_mask)
    seg = np.clip(np.searchsorted(bidx, np.arange(grid.size), side="right") - 1, 0, bidx.size - 2)
    a, b = bidx[seg], bidx[seg + 1]
    lam = ((grid - grid[a]) / (grid[b] - grid[a]))[:, None]
    out = (
        base_vals[seg]
        + free - free[a]
        - lam * (free[b] - free[a] - (base_vals[seg + 1] - base_vals[seg]))
    )
    out[bidx] = base_vals
    return out


def sample_levy_path(
    triplet: GeneratingTriplet,
    T: float,
    n_steps: int,
    seed: int,
    *,
    small_jumps: str = "truncate",
    epsilon: float = 1e-3,
) -> CadlagPath:
    """Sample ``L`` on ``[0, T]`` via its small/Gaussian/large decomposition.

    The uniform grid of ``n_steps`` intervals is refined to contain every
    jump time. Jumps are drawn from a stream that does not depend on the grid,
    so changing ``n_steps`` keeps the jump record. Small jumps of
    :class:`SmallJumpStable` components below ``epsilon`` are dropped
    (``small_jumps="truncate"``) or replaced by a Brownian motion of matching
    covariance (``small_jumps="gaussian"``).
    """
    if n_steps < 1 or not T > 0:
        raise ValueError("need n_steps >= 1 and T > 0")
    if small_jumps not in ("truncate", "gaussian"):
        raise ValueError(f"unknown small-jump strategy {small_jumps!r}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    d = triplet.dim
    base_grid = np.linspace(0.0, T, n_steps + 1)

    times_list, sizes_list = [], []
    surrogate_var = 0.0
    for j, comp in enumerate(triplet.levy_measure):
        t, y = comp.sample(_rng.stream(seed, _rng.JUMPS, j), T, epsilon)
        times_list.append(t)
        sizes_list.append(y)
        if isinstance(comp, SmallJumpStable) and small_jumps == "gaussian":
            surrogate_var += comp.second_moment_below(epsilon) / d
    times = np.concatenate(times_list) if times_list else np.empty(0)
    sizes = np.vstack(sizes_list) if sizes_list else np.empty((0, d))
    times, inverse = np.unique(times, return_inverse=True)
    merged = np.zeros((times.size, d))
    np.add.at(merged, inverse, sizes)
    keep = np.any(merged != 0.0, axis=1)
    times, merged = times[keep], merged[keep]

    grid, base_mask, _ = refine_grid(base_grid, times)
    big = np.linalg.norm(merged, axis=1) > 1.0
    large = CadlagPath.from_jump_record(grid, times[big], merged[big], base_mask, d)

    if triplet.is_gaussian_free:
        gauss_vals = np.zeros((grid.size, d))
    else:
        gauss_vals = _brownian_fill(
            _rng.stream(seed, _rng.GAUSSIAN), _rng.stream(seed, _rng.BRIDGE),
            triplet.factor, base_grid, grid, base_mask,
        )
    no_jumps = np.empty((0, d))
    gaussian = CadlagPath._trusted(grid, gauss_vals, no_jumps[:, 0], no_jumps, base_mask)

    small_jumps_path = CadlagPath.from_jump_record(grid, times[~big], merged[~big], base_mask, d)
    small_vals = small_jumps_path.values - grid[:, None] * triplet.compensator_rate()
    if surrogate_var > 0.0:
        small_vals = small_vals + _brownian_fill(
            _rng.stream(seed, _rng.AUXILIARY, 0), _rng.stream(seed, _rng.AUXILIARY, 1),
            math.sqrt(surrogate_var) * np.eye(d), base_grid, grid, base_mask,
        )
    small = CadlagPath._trusted(grid, small_vals, times[~big], merged[~big], base_mask)

    parts = {"small": small, "gaussian": gaussian, "large": large}
    total = small_vals + gauss_vals + large.values
    return CadlagPath._trusted(grid, total, times, merged, base_mask, parts)


def sample_ensemble(
    triplet: GeneratingTriplet, T: float, n_steps: int, master_seed: int, n_paths: int, **kwargs
) -> Iterator[CadlagPath]:
    """Yield ``n_paths`` paths whose seeds fan out from ``master_seed``."""
    for i in range(n_paths):
        yield sample_levy_path(triplet, T, n_steps, _rng.path_seed(master_seed, i), **kwargs)


def empirical_char_fn(samples: np.ndarray, k) -> tuple[complex, float]:
    """Sample mean of ``exp(i<k, X>)`` and its Monte Carlo standard error."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    k = _as_vector(k, samples.shape[1])
    e = np.exp(1j * samples @ k)
    m = e.mean()
    se = float(np.sqrt(np.mean(np.abs(e - m) ** 2) / e.size))
    return complex(m), se
