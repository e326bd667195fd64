"""Kinetic Langevin dynamics ``dX = V dt, dV = F(X, V) dt + dW`` with Hölder force.

The system is the degenerate SDE on ``R^{2d}`` with

    A = [[0, I], [0, 0]],   sigma = [[0], [I]],   b(x, v) = (0, F(x, v)),

and ``A`` nilpotent of order two. Forces are sums of clipped power functions
of linear projections, for which Hölder constants are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import rng as _rng
from .additive_integral import ConstantIntegrand
from .levy_core import GeneratingTriplet
from .paths import CadlagPath
from .sde_solver import HolderField, SdeProblem, step_factor

# open range of the position exponent where pathwise uniqueness is expected
UNIQUENESS_REGIME = (2.0 / 3.0, 1.0)
SHAPES = ("signed", "abs")


def _power(s: np.ndarray, expo: float, clip: float, shape: str) -> np.ndarray:
    a = np.abs(s) ** expo
    if shape == "abs":
        return np.minimum(a, clip)
    return np.clip(np.sign(s) * a, -clip, clip)


def _shape_const(expo: float, shape: str) -> float:
    # |sgn(a)|a|^g - sgn(b)|b|^g| <= 2^(1-g) |a-b|^g; ||a|^g - |b|^g| <= |a-b|^g;
    # clipping is 1-Lipschitz and does not increase either constant
    return 2.0 ** (1.0 - expo) if shape == "signed" else 1.0


def _vec(a, d: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a = np.broadcast_to(a, (d,)) if a.ndim == 0 else a
    if a.shape != (d,):
        raise ValueError(f"{name} must have {d} entries")
    return a.copy()


def _mat(a, d: int, name: str) -> np.ndarray:
    a = np.eye(d) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (d, d):
        raise ValueError(f"{name} must be {d}x{d}")
    return a.copy()


@dataclass(frozen=True, eq=False)
class KineticForce:
    """``F_i(x, v) = c_i h_gamma(u_i.x - k_i) + c'_i h_beta'(w_i.v - k'_i)``.

    ``h_e(s)`` is ``clip(sgn(s)|s|^e, +-clip)`` (shape ``"signed"``) or
    ``min(|s|^e, clip)`` (shape ``"abs"``). The certified constant ``C``
    satisfies ``|F(x,v) - F(x',v')| <= C (|x-x'|^gamma + |v-v'|^beta')``.
    """

    d: int
    gamma: float
    beta_prime: float
    c: np.ndarray
    u: np.ndarray
    k: np.ndarray
    c_prime: np.ndarray
    w: np.ndarray
    k_prime: np.ndarray
    clip: float = 1.0
    shape: str = "signed"
    C_x: float = field(init=False)
    C_v: float = field(init=False)

    def __post_init__(self):
        for name in ("gamma", "beta_prime"):
            e = getattr(self, name)
            if not (0.0 < e <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {e}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if not self.clip > 0:
            raise ValueError("clip level must be positive")
        cx = np.abs(self.c) * _shape_const(self.gamma, self.shape) * np.linalg.norm(self.u, axis=1) ** self.gamma
        cv = (
            np.abs(self.c_prime) * _shape_const(self.beta_prime, self.shape)
            * np.linalg.norm(self.w, axis=1) ** self.beta_prime
        )
        for name in ("c", "u", "k", "c_prime", "w", "k_prime"):
            getattr(self, name).setflags(write=False)
        object.__setattr__(self, "C_x", float(np.linalg.norm(cx)))
        object.__setattr__(self, "C_v", float(np.linalg.norm(cv)))

    @property
    def C(self) -> float:
        return max(self.C_x, self.C_v)

    @property
    def bound(self) -> float:
        return float(np.linalg.norm((np.abs(self.c) + np.abs(self.c_prime)) * self.clip))

    @property
    def in_uniqueness_regime(self) -> bool:
        lo, hi = UNIQUENESS_REGIME
        return lo < self.gamma < hi

    def __call__(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        px = x @ self.u.T - self.k
        pv = v @ self.w.T - self.k_prime
        return (
            self.c * _power(px, self.gamma, self.clip, self.shape)
            + self.c_prime * _power(pv, self.beta_prime, self.clip, self.shape)
        )

    def check_certificates(self, seed: int = 0, n_pairs: int = 10_000, radius: float = 3.0):
        """Largest sampled ratio ``|F - F'| / (|dx|^gamma + |dv|^beta')`` and largest ``|F|``."""
        rg = _rng.stream(seed, _rng.AUXILIARY, 11)
        d = self.d
        x = rg.uniform(-radius, radius, size=(n_pairs, d))
        v = rg.uniform(-radius, radius, size=(n_pairs, d))
        scale = np.exp(rg.uniform(math.log(1e-6), math.log(2 * radius), size=(n_pairs, 2)))
        dx = rg.standard_normal((n_pairs, d))
        dv = rg.standard_normal((n_pairs, d))
        dx *= scale[:, :1] / np.linalg.norm(dx, axis=1, keepdims=True)
        dv *= scale[:, 1:] / np.linalg.norm(dv, axis=1, keepdims=True)
        # also probe pure-x and pure-v displacements
        dv[: n_pairs // 3] = 0.0
        dx[n_pairs // 3 : 2 * n_pairs // 3] = 0.0
        F0, F1 = self(x, v), self(x + dx, v + dv)
        denom = np.linalg.norm(dx, axis=1) ** self.gamma + np.linalg.norm(dv, axis=1) ** self.beta_prime
        q = np.linalg.norm(F0 - F1, axis=1) / denom
        amax = max(np.linalg.norm(F0, axis=1).max(), np.linalg.norm(F1, axis=1).max())
        return float(q.max()), float(amax)


def holder_force_field(spec: Mapping | None = None, **kwargs) -> KineticForce:
    """Build a :class:`KineticForce` from a mapping of parameters.

    Keys: ``d``, ``gamma``, ``beta_prime`` and optionally ``c``, ``u``,
    ``k``, ``c_prime``, ``w``, ``k_prime`` (scalars broadcast over
    components, matrices default to the identity), ``clip`` and ``shape``.
    """
    p = dict(spec or {}, **kwargs)
    d = int(p.get("d", 1))
    return KineticForce(
        d=d,
        gamma=float(p["gamma"]),
        beta_prime=float(p.get("beta_prime", 0.5)),
        c=_vec(p.get("c", 1.0), d, "c"),
        u=_mat(p.get("u"), d, "u"),
        k=_vec(p.get("k", 0.0), d, "k"),
        c_prime=_vec(p.get("c_prime", 0.0), d, "c_prime"),
        w=_mat(p.get("w"), d, "w"),
        k_prime=_vec(p.get("k_prime", 0.0), d, "k_prime"),
        clip=float(p.get("clip", 1.0)),
        shape=str(p.get("shape", "signed")),
    )


DEFAULT_FORCE = {"d": 1, "gamma": 0.75, "beta_prime": 0.5, "c": 1.0, "c_prime": 0.5, "k": 0.1}


def default_force() -> KineticForce:
    """Reference instance: ``d = 1``, ``gamma = 0.75``, ``beta' = 0.5``."""
    return holder_force_field(DEFAULT_FORCE)


def kinetic_matrices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """``A = [[0, I], [0, 0]]`` and ``C = [[0], [I]]``."""
    A = np.zeros((2 * d, 2 * d))
    A[:d, d:] = np.eye(d)
    C = np.zeros((2 * d, d))
    C[d:] = np.eye(d)
    return A, C


def make_kinetic_problem(F: KineticForce, T: float = 1.0) -> SdeProblem:
    """Embed the kinetic system as an SDE on ``R^{2d}`` driven by Brownian motion.

    The drift ``(0, F)`` is given a single Hölder exponent
    ``beta = min(gamma, beta')`` with constant ``max(2 C, 2 |F|_inf)``:
    displacements below one are controlled by ``C`` through both exponents,
    larger ones by twice the sup-norm.
    """
    d = F.d
    A, C = kinetic_matrices(d)

    def drift(t, z, _F=F, _d=d):
        out = np.zeros_like(z)
        out[..., _d:] = _F(z[..., :_d], z[..., _d:])
        return out

    field_ = HolderField(
        drift, 2 * d, F.bound, min(F.gamma, F.beta_prime), max(2.0 * F.C, 2.0 * F.bound),
        "kinetic", True,
        params={"gamma": F.gamma, "beta_prime": F.beta_prime, "C": F.C},
    )
    return SdeProblem(2 * d, d, A, ConstantIntegrand(C), field_, T, GeneratingTriplet.brownian(d))


@dataclass(frozen=True, eq=False)
class KineticPaths:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.hstack([self.x, self.v])

    def to_csv(self, target) -> None:
        d = self.x.shape[1]
        cols = ["time"] + [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
        np.savetxt(
            target, np.column_stack([self.t, self.x, self.v]), fmt="%.17g", delimiter=",",
            header=",".join(cols), comments="",
        )


def explicit_kinetic_solve(F: KineticForce, W: CadlagPath, x, v, dt: float | None = None) -> KineticPaths:
    """Forward quadrature of the position/velocity integral system.

    Solves

        x(t) = x + t v + int_0^t (t - s) F ds + int_0^t W_s ds,
        v(t) = v + int_0^t F ds + W_t,

    with ``F`` frozen at the left node of each step. The kernel is split as
    ``t int F ds - int s F ds`` and both running integrals are accumulated,
    so the cost is linear in the number of steps; ``int W ds`` uses the
    trapezoid rule.
    """
    if W.jump_times.size:
        raise ValueError("the velocity noise must be continuous")
    if W.dim != F.d:
        raise ValueError("noise dimension must equal the force dimension")
    if dt is not None:
        W = W.coarsen(step_factor(W, dt))
    t = W.grid
    Wv = W.values
    d = F.d
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    v0 = np.atleast_1d(np.asarray(v, dtype=float))
    dts = np.diff(t)
    half_sq = 0.5 * (t[1:] ** 2 - t[:-1] ** 2)
    IW = np.vstack([np.zeros((1, d)), np.cumsum(0.5 * (Wv[1:] + Wv[:-1]) * dts[:, None], axis=0)])
    xs = np.empty((t.size, d))
    vs = np.empty((t.size, d))
    xs[0], vs[0] = x0, v0
    S1 = np.zeros(d)
    S2 = np.zeros(d)
    for j in range(dts.size):
        Fj = F(xs[j], vs[j])
        S1 = S1 + Fj * dts[j]
        S2 = S2 + Fj * half_sq[j]
        tk = t[j + 1]
        xs[j + 1] = x0 + tk * v0 + tk * S1 - S2 + IW[j + 1]
        vs[j + 1] = v0 + S1 + Wv[j + 1]
    return KineticPaths(t, xs, vs)
