"""Right-continuous piecewise paths with explicit jump records."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

PART_NAMES = ("small", "gaussian", "large")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def refine_grid(base: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Insert ``times`` into a strictly increasing ``base`` grid.

    Returns
    -------
    grid : ndarray
        Union of both sets of times.
    base_mask : ndarray of bool
        True at nodes that came from ``base``.
    index : ndarray of int
        Position of each entry of ``times`` in ``grid``.
    """
    base = np.asarray(base, dtype=float)
    times = np.asarray(times, dtype=float)
    extra = np.setdiff1d(times, base)
    grid = np.union1d(base, extra)
    base_mask = np.isin(grid, base, assume_unique=True)
    index = np.searchsorted(grid, times)
    return grid, base_mask, index


@dataclass(frozen=True, eq=False)
class CadlagPath:
    """A càdlàg path sampled on a grid that contains all of its jump times.

    ``values[i]`` is the right limit at ``grid[i]``. Jumps are recorded as
    sorted ``jump_times`` in ``(0, T]`` with matching ``jump_sizes``; every
    jump time is a grid node, so the left limit there is ``values[i] - size``.

    ``base`` marks the nodes of the underlying uniform grid (the remaining
    nodes were inserted at jump times). ``parts`` optionally keeps the
    small-jump, Gaussian and large-jump components of a driving Lévy path.
    """

    grid: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_sizes: np.ndarray | None = None
    base: np.ndarray | None = None
    parts: Mapping[str, "CadlagPath"] | None = None

    def __post_init__(self):
        grid = _frozen(self.grid)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be one-dimensional with at least two nodes")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("grid times must be strictly increasing")
        if values.shape[0] != grid.size:
            raise ValueError(f"values has {values.shape[0]} rows for {grid.size} grid nodes")
        k = values.shape[1]
        jt = _frozen(np.atleast_1d(self.jump_times))
        js = np.zeros((0, k)) if self.jump_sizes is None else np.asarray(self.jump_sizes, dtype=float)
        js = js.reshape(jt.size, k)
        if jt.size:
            if np.any(np.diff(jt) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if jt[0] <= grid[0] or jt[-1] > grid[-1]:
                raise ValueError("jump times must lie in (t0, T]")
            idx = np.searchsorted(grid, jt)
            if np.any(grid[np.minimum(idx, grid.size - 1)] != jt):
                raise ValueError("every jump time must be a grid node")
        base = np.ones(grid.size, dtype=bool) if self.base is None else np.array(self.base, dtype=bool)
        if base.shape != grid.shape:
            raise ValueError("base mask must match the grid")
        base.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_sizes", _frozen(js))
        object.__setattr__(self, "base", base)
        if self.parts is not None:
            for name, part in self.parts.items():
                if part.grid.shape != grid.shape or part.dim != k:
                    raise ValueError(f"part {name!r} does not share the path's grid and dimension")
            object.__setattr__(self, "parts", dict(self.parts))

    @classmethod
    def _trusted(cls, grid, values, jump_times, jump_sizes, base, parts=None) -> "CadlagPath":
        """Build without validation; callers guarantee the invariants."""
        self = object.__new__(cls)
        for name, val in (
            ("grid", grid), ("values", values), ("jump_times", jump_times),
            ("jump_sizes", jump_sizes), ("base", base),
        ):
            val = np.asarray(val, dtype=bool if name == "base" else float)
            if val.flags.writeable:
                val = val.copy()
                val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "parts", None if parts is None else dict(parts))
        return self

    # ------------------------------------------------------------------ basics
    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def base_step(self) -> float:
        """Spacing of the underlying uniform grid."""
        g = self.grid[self.base]
        return float((g[-1] - g[0]) / (g.size - 1))

    @cached_property
    def jump_index(self) -> np.ndarray:
        return np.searchsorted(self.grid, self.jump_times)

    @cached_property
    def jumps_dense(self) -> np.ndarray:
        """Jump vector at every node (zero off the jump record)."""
        out = np.zeros_like(self.values)
        out[self.jump_index] = self.jump_sizes
        return out

    @cached_property
    def left_values(self) -> np.ndarray:
        return self.values - self.jumps_dense

    @cached_property
    def continuous_increments(self) -> np.ndarray:
        """Increment over each grid interval minus the jump at its right end."""
        return self.left_values[1:] - self.values[:-1]

    @cached_property
    def is_jump(self) -> np.ndarray:
        mask = np.zeros(self.grid.size, dtype=bool)
        mask[self.jump_index] = True
        return mask

    def index_of(self, t: float, atol: float | None = None) -> int:
        """Index of the node at time ``t``; raises if ``t`` is not a node."""
        if atol is None:
            atol = 1e-9 * max(1.0, abs(self.T))
        i = int(np.clip(np.searchsorted(self.grid, t), 0, self.grid.size - 1))
        for j in (i - 1, i):
            if 0 <= j < self.grid.size and abs(self.grid[j] - t) <= atol:
                return j
        raise ValueError(f"time {t!r} is not a grid node")

    def value_at(self, t: float) -> np.ndarray:
        """Right-continuous evaluation, exact at nodes and frozen in between."""
        if t < self.grid[0] or t > self.T:
            raise ValueError(f"time {t!r} outside [{self.grid[0]}, {self.T}]")
        i = np.searchsorted(self.grid, t, side="right") - 1
        return self.values[i]

    def part(self, name: str) -> "CadlagPath":
        return self.decomposed()[name]

    def decomposed(self) -> dict[str, "CadlagPath"]:
        """Return the small/Gaussian/large components.

        Paths sampled from a triplet carry them; otherwise jumps with norm
        above one are classified as large, remaining jumps as small, and the
        continuous remainder as Gaussian.
        """
        if self.parts is not None:
            return dict(self.parts)
        norms = np.linalg.norm(self.jump_sizes, axis=1)
        big = norms > 1.0
        g, k = self.grid, self.dim
        large = self.from_jump_record(g, self.jump_times[big], self.jump_sizes[big], self.base, k)
        small = self.from_jump_record(g, self.jump_times[~big], self.jump_sizes[~big], self.base, k)
        cont = self.values - large.values - small.values
        gaussian = CadlagPath(self.grid, cont, base=self.base)
        return {"small": small, "gaussian": gaussian, "large": large}

    # ----------------------------------------------------------- constructors
    @classmethod
    def zeros(cls, T: float, n_steps: int, dim: int) -> "CadlagPath":
        grid = np.linspace(0.0, T, n_steps + 1)
        return cls(grid, np.zeros((grid.size, dim)))

    @classmethod
    def from_jump_record(cls, grid, times, sizes, base=None, dim: int | None = None) -> "CadlagPath":
        """Pure-jump path on an existing grid that already contains ``times``."""
        grid = np.asarray(grid, dtype=float)
        times = np.asarray(times, dtype=float)
        sizes = np.asarray(sizes, dtype=float)
        if dim is None:
            dim = 1 if sizes.ndim <= 1 else sizes.shape[1]
        sizes = sizes.reshape(times.size, dim)
        dense = np.zeros((grid.size, dim))
        np.add.at(dense, np.searchsorted(grid, times), sizes)
        if base is None:
            base = np.ones(grid.size, dtype=bool)
        return cls._trusted(grid, np.cumsum(dense, axis=0), times, sizes, base)

    @classmethod
    def from_jumps(cls, T: float, n_steps: int, times, sizes, dim: int | None = None) -> "CadlagPath":
        """Pure-jump path on a uniform grid refined to contain ``times``."""
        times = np.asarray(times, dtype=float)
        sizes = np.asarray(sizes, dtype=float)
        if dim is None:
            dim = 1 if sizes.ndim <= 1 else sizes.shape[1]
        sizes = sizes.reshape(times.size, dim)
        order = np.argsort(times, kind="stable")
        grid, base, _ = refine_grid(np.linspace(0.0, T, n_steps + 1), times)
        return cls.from_jump_record(grid, times[order], sizes[order], base, dim)

    @classmethod
    def from_function(cls, T: float, n_steps: int, func) -> "CadlagPath":
        """Continuous path with ``values[i] = func(t_i)``."""
        grid = np.linspace(0.0, T, n_steps + 1)
        vals = np.asarray([np.atleast_1d(func(t)) for t in grid], dtype=float)
        return cls(grid, vals)

    # ------------------------------------------------------------- transforms
    def with_values(self, values, jump_sizes) -> "CadlagPath":
        """Same grid, base and jump times; new values and jump sizes."""
        return CadlagPath(self.grid, values, self.jump_times, jump_sizes, self.base)

    def coarsen(self, factor: int) -> "CadlagPath":
        """Keep every ``factor``-th uniform node plus all jump nodes."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("coarsening factor must be a positive integer")
        if factor == 1:
            return self
        base_idx = np.flatnonzero(self.base)
        if (base_idx.size - 1) % factor:
            raise ValueError(
                f"{base_idx.size - 1} uniform steps are not divisible by factor {factor}"
            )
        kept_base = base_idx[::factor]
        keep = np.union1d(kept_base, self.jump_index)
        new_base = np.isin(keep, kept_base)
        parts = None
        if self.parts is not None:
            parts = {k: p._select(keep, new_base) for k, p in self.parts.items()}
        return self._select(keep, new_base, parts)

    def _select(self, keep, new_base, parts=None) -> "CadlagPath":
        return CadlagPath(
            self.grid[keep], self.values[keep], self.jump_times, self.jump_sizes, new_base, parts
        )

    def shifted(self, s: float) -> "CadlagPath":
        """The path ``t -> X(s + t) - X(s)`` on ``[0, T - s]``."""
        i = self.index_of(s)
        if i >= self.grid.size - 1:
            raise ValueError("shift must leave at least one grid interval")
        grid = self.grid[i:] - self.grid[i]
        mask = self.jump_index > i
        idx = self.jump_index[mask] - i
        base = self.base[i:].copy()
        base[0] = True
        parts = None
        if self.parts is not None:
            parts = {k: p.shifted(s) for k, p in self.parts.items()}
        return CadlagPath(
            grid, self.values[i:] - self.values[i], grid[idx], self.jump_sizes[mask], base, parts
        )

    def apply(self, mats) -> "CadlagPath":
        """Pointwise linear map ``values[i] -> mats[i] @ values[i]``.

        ``mats`` is a single ``(m, k)`` matrix or a stack ``(N+1, m, k)``.
        """
        mats = np.asarray(mats, dtype=float)
        if mats.ndim == 2:
            vals = self.values @ mats.T
            js = self.jump_sizes @ mats.T
        else:
            vals = np.einsum("nij,nj->ni", mats, self.values)
            left = np.einsum("nij,nj->ni", mats[self.jump_index], self.left_values[self.jump_index])
            js = vals[self.jump_index] - left
        return CadlagPath(self.grid, vals, self.jump_times, js, self.base)

    def _check_compatible(self, other: "CadlagPath"):
        if self.grid.shape != other.grid.shape or not np.array_equal(self.grid, other.grid):
            raise ValueError("paths live on different grids")
        if self.dim != other.dim:
            raise ValueError("paths have different dimensions")

    def __add__(self, other: "CadlagPath") -> "CadlagPath":
        self._check_compatible(other)
        idx = np.union1d(self.jump_index, other.jump_index).astype(int)
        sizes = self.jumps_dense[idx] + other.jumps_dense[idx]
        return CadlagPath(
            self.grid, self.values + other.values, self.grid[idx], sizes, self.base & other.base
        )

    def __neg__(self) -> "CadlagPath":
        return CadlagPath(self.grid, -self.values, self.jump_times, -self.jump_sizes, self.base)

    def __sub__(self, other: "CadlagPath") -> "CadlagPath":
        return self + (-other)

    def scaled(self, c: float) -> "CadlagPath":
        return CadlagPath(self.grid, c * self.values, self.jump_times, c * self.jump_sizes, self.base)

    # ---------------------------------------------------------------- export
    def to_csv(self, target, value_prefix: str = "v") -> None:
        """Write columns ``time, v1..vk, is_jump`` with round-trip precision."""
        cols = ["time"] + [f"{value_prefix}{j + 1}" for j in range(self.dim)] + ["is_jump"]
        data = np.column_stack([self.grid, self.values, self.is_jump.astype(float)])
        fmt = ["%.17g"] * (self.dim + 1) + ["%d"]
        np.savetxt(target, data, fmt=fmt, delimiter=",", header=",".join(cols), comments="")

