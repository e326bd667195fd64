"""Matrix exponentials and the pathwise integration-by-parts identity.

For constant ``A`` and ``M_t = int_0^t sigma dL`` the identity

    int_s^t e^{(t-r)A} A M_r dr
        = int_s^t e^{(t-r)A} sigma(r) dL_r + e^{(t-s)A} M_s - M_t

holds path by path; :func:`integration_by_parts_residual` measures how well
a discretised path satisfies it.
"""
from __future__ import annotations

import math
import threading

import numpy as np
from scipy import linalg

from .errors import MatrixExpOverflowError
from .paths import CadlagPath

NILPOTENT_TOL = 1e-14


def _as_square(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A has non-finite entries")
    return A


def nilpotency_index(A, tol: float = NILPOTENT_TOL) -> int | None:
    """Smallest ``m <= n`` with ``A^m = 0`` (entrywise, relative to ``|A|^m``), else None."""
    A = _as_square(A)
    n = A.shape[0]
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    P = np.eye(n)
    for m in range(1, n + 1):
        P = P @ A
        if np.abs(P).max(initial=0.0) <= tol * scale**m:
            return m
    return None


def _series_terms(A: np.ndarray, m: int) -> np.ndarray:
    """Stack ``A^j / j!`` for ``j < m``."""
    n = A.shape[0]
    out = np.empty((m, n, n))
    P = np.eye(n)
    for j in range(m):
        out[j] = P / math.factorial(j)
        P = P @ A
    return out


def matexp(A, t: float = 1.0) -> np.ndarray:
    """``exp(tA)``; exact finite series when ``A`` is nilpotent, Padé otherwise."""
    A = _as_square(A)
    m = nilpotency_index(A)
    if m is not None:
        terms = _series_terms(A, m)
        return np.tensordot(float(t) ** np.arange(m), terms, axes=1)
    tA = float(t) * A
    with np.errstate(over="ignore", invalid="ignore"):
        E = linalg.expm(tA)
    if not np.all(np.isfinite(E)):
        raise MatrixExpOverflowError(float(np.abs(tA).sum(axis=0).max()))
    return E


class MatrixExp:
    """``t -> exp(tA)`` for one constant matrix, with a guarded cache.

    Nilpotent and diagonal matrices are evaluated in closed form for whole
    arrays of times at once; other matrices go through :func:`matexp` per
    distinct time and are cached.
    """

    def __init__(self, A):
        self.A = _as_square(A)
        self.A.setflags(write=False)
        self.n = self.A.shape[0]
        self.is_zero = not np.any(self.A)
        m = nilpotency_index(self.A)
        self._terms = _series_terms(self.A, m) if m is not None else None
        self._diag = (
            np.diag(self.A).copy()
            if self._terms is None and np.count_nonzero(self.A - np.diag(np.diag(self.A))) == 0
            else None
        )
        self._cache: dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def nilpotent(self) -> bool:
        return self._terms is not None

    def __call__(self, t: float) -> np.ndarray:
        return self.at(np.array([float(t)]))[0]

    def at(self, times) -> np.ndarray:
        """Stack of ``exp(t A)`` for every entry of ``times`` (shape ``(*times.shape, n, n)``)."""
        times = np.asarray(times, dtype=float)
        flat = times.reshape(-1)
        n = self.n
        if self.is_zero:
            out = np.broadcast_to(np.eye(n), (flat.size, n, n)).copy()
        elif self._terms is not None:
            powers = flat[:, None] ** np.arange(self._terms.shape[0])
            out = np.tensordot(powers, self._terms, axes=1)
        elif self._diag is not None:
            with np.errstate(over="ignore"):
                e = np.exp(flat[:, None] * self._diag)
            if not np.all(np.isfinite(e)):
                raise MatrixExpOverflowError(float(np.abs(flat).max() * np.abs(self._diag).max()))
            out = np.zeros((flat.size, n, n))
            idx = np.arange(n)
            out[:, idx, idx] = e
        else:
            out = np.empty((flat.size, n, n))
            for i, t in enumerate(flat):
                key = float(t)
                with self._lock:
                    E = self._cache.get(key)
                if E is None:
                    E = matexp(self.A, key)
                    with self._lock:
                        self._cache[key] = E
                out[i] = E
        return out.reshape(times.shape + (n, n))

    def norm_bound(self, t_max: float) -> float:
        """Upper bound on ``sup_{|r| <= t_max} ||exp(rA)||_2``."""
        if self.is_zero:
            return 1.0
        a = float(np.linalg.norm(self.A, 2))
        if self._terms is not None:
            return float(sum((t_max * a) ** j / math.factorial(j) for j in range(self._terms.shape[0])))
        if self._diag is not None:
            return float(np.exp(t_max * np.abs(self._diag).max()))
        return math.exp(t_max * a)


def integration_by_parts_terms(A, sigma, L: CadlagPath, s: float, t: float):
    """Both sides of the integration-by-parts identity on the grid of ``L``.

    The ``dr`` integral is computed interval by interval: the kernel
    ``e^{(t-r)A} A`` is integrated exactly and ``M`` is averaged between the
    right value at the left node and the left limit at the right node, so jumps
    of ``M`` never enter the trapezoid. The stochastic integral uses
    left-point sums for the continuous increments and the exact jump sum.

    Returns
    -------
    lhs, rhs : ndarray of shape (n,)
    """
    from .additive_integral import as_integrand, stochastic_integral

    sigma = as_integrand(sigma)
    if t < s:
        raise ValueError("need s <= t")
    mexp = MatrixExp(A)
    M = stochastic_integral(sigma, L).total
    i, j = L.index_of(s), L.index_of(t)
    grid = L.grid
    tt = grid[j]
    E = mexp.at(tt - grid[i : j + 1])  # e^{(t - r_k) A}
    mid = 0.5 * (M.values[i:j] + M.left_values[i + 1 : j + 1])
    lhs = np.einsum("kab,kb->a", E[:-1] - E[1:], mid)
    if mexp.is_zero:
        # the weighted integral is M_t - M_s itself
        stoch = M.values[j] - M.values[i]
    else:
        S = sigma.values(grid[i : j + 1])
        dLc = L.continuous_increments[i:j]
        stoch = np.einsum("kab,kbc,kc->a", E[:-1], S[:-1], dLc)
        jumps = L.jumps_dense[i + 1 : j + 1]
        stoch = stoch + np.einsum("kab,kbc,kc->a", E[1:], S[1:], jumps)
    rhs = stoch - (M.values[j] - E[0] @ M.values[i])
    return lhs, rhs


def integration_by_parts_residual(A, sigma, L: CadlagPath, s: float, t: float) -> float:
    """Sup-norm of the defect in the integration-by-parts identity on ``[s, t]``."""
    lhs, rhs = integration_by_parts_terms(A, sigma, L, s, t)
    return float(np.abs(lhs - rhs).max(initial=0.0))
