"""Brownian increments on uniform grids.

Every replica draws from its own Philox stream keyed by
``(master_seed, replica_id)``, so a path never depends on how replicas are
scheduled.  Coarsening always sums the root (finest) increments left to
right, which makes repeated coarsening bitwise equal to a single coarsening
by the product factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError

# Philox has a 256-bit counter; keep well clear of anything exotic
_MAX_DRAWS = 2 ** 62


class Provenance(NamedTuple):
    master_seed: int
    replica_id: int
    coarsening_factor: int


@dataclass(frozen=True, eq=False)
class BrownianGrid:
    d: int
    T: float
    n_steps: int
    increments: np.ndarray
    provenance: Provenance
    root: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        inc = self.increments
        if inc.shape != (self.n_steps, self.d):
            raise ConfigurationError(f"increments shape {inc.shape} != ({self.n_steps}, {self.d})")
        if not np.all(np.isfinite(inc)):
            raise ConfigurationError("Brownian increments must be finite")
        inc.setflags(write=False)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def root_increments(self) -> np.ndarray:
        return self.increments if self.root is None else self.root

    @property
    def factor(self) -> int:
        return self.provenance.coarsening_factor

    def brownian_path(self) -> np.ndarray:
        """W at the grid times, starting from 0; shape (n_steps + 1, d)."""
        return cumulative(self.increments)

    def dump(self, path):
        """Write raw increments as little-endian float64, row-major (step, coordinate)."""
        np.ascontiguousarray(self.increments, dtype="<f8").tofile(path)


def load_increments(path, d: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f8")
    if raw.size % d:
        raise ConfigurationError(f"{path}: {raw.size} values do not split into rows of {d}")
    return raw.reshape(-1, d)


def _check_args(d, T, n_steps):
    if d < 1 or int(d) != d:
        raise ConfigurationError(f"dimension must be a positive integer, got {d}")
    if not (T > 0 and math.isfinite(T)):
        raise ConfigurationError(f"horizon T must be positive, got {T}")
    if n_steps < 1 or int(n_steps) != n_steps:
        raise ConfigurationError(f"n_steps must be a positive integer, got {n_steps}")
    if n_steps * d >= _MAX_DRAWS:
        raise ConfigurationError(f"n_steps * d = {n_steps * d} overflows the counter space")


def replica_stream(master_seed: int, replica_id: int) -> np.random.Generator:
    if master_seed < 0 or replica_id < 0:
        raise ConfigurationError("seed and replica id must be nonnegative")
    if master_seed >= 2 ** 64 or replica_id >= 2 ** 64:
        raise ConfigurationError("seed and replica id must fit in 64 bits")
    return np.random.Generator(np.random.Philox(key=(int(master_seed) << 64) | int(replica_id)))


def draw_increments(d, T, n_steps, master_seed, replica_id) -> np.ndarray:
    _check_args(d, T, n_steps)
    z = replica_stream(master_seed, replica_id).standard_normal((n_steps, d))
    return z * math.sqrt(T / n_steps)


def draw_batch(d, T, n_steps, master_seed, replica_ids) -> np.ndarray:
    """Increments of several replicas stacked to shape (R, n_steps, d)."""
    _check_args(d, T, n_steps)
    ids = list(replica_ids)
    out = np.empty((len(ids), n_steps, d))
    scale = math.sqrt(T / n_steps)
    for row, rid in enumerate(ids):
        replica_stream(master_seed, rid).standard_normal((n_steps, d), out=out[row])
    out *= scale
    return out


def generate(d: int, T: float, n_steps: int, master_seed: int, replica_id: int) -> BrownianGrid:
    inc = draw_increments(d, T, n_steps, master_seed, replica_id)
    return BrownianGrid(d, float(T), int(n_steps), inc, Provenance(int(master_seed), int(replica_id), 1))


def block_sum(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` rows along axis -2, left to right."""
    n = increments.shape[-2]
    if factor < 1 or n % factor:
        raise ConfigurationError(f"coarsening factor {factor} does not divide {n} steps")
    if factor == 1:
        return increments.copy()
    blocks = increments.reshape(increments.shape[:-2] + (n // factor, factor, increments.shape[-1]))
    # cumsum is strictly sequential, unlike the pairwise np.sum
    return np.cumsum(blocks, axis=-2)[..., -1, :]


def coarsen(grid: BrownianGrid, factor: int) -> BrownianGrid:
    """Coarse grid whose increment j sums fine increments [j*factor, (j+1)*factor)."""
    if int(factor) != factor or factor < 1 or grid.n_steps % factor:
        raise ConfigurationError(f"coarsening factor {factor} does not divide {grid.n_steps} steps")
    factor = int(factor)
    total = grid.factor * factor
    root = grid.root_increments
    inc = block_sum(root, total)
    prov = grid.provenance._replace(coarsening_factor=total)
    return BrownianGrid(grid.d, grid.T, grid.n_steps // factor, inc, prov, root=root)


def cumulative(increments: np.ndarray) -> np.ndarray:
    """Partial sums along axis -2 with a leading zero row."""
    shape = increments.shape[:-2] + (1, increments.shape[-1])
    return np.concatenate([np.zeros(shape), np.cumsum(increments, axis=-2)], axis=-2)


def eta(s: float, delta: float) -> float:
    """Grid projection floor(s / delta) * delta; grid points map to themselves."""
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    if s <= 0:
        return 0.0
    q = s / delta
    k = round(q)
    if abs(q - k) <= 4 * np.finfo(float).eps * max(1.0, q):
        return float(s)
    return float(min(math.floor(q) * delta, s))


class IncrementStats(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray
    max_abs: float
    count: int


def increment_stats(grids) -> IncrementStats:
    """Pooled per-coordinate mean and (population) variance of increments."""
    arrays = [g.increments if isinstance(g, BrownianGrid) else np.asarray(g) for g in grids]
    if not arrays:
        raise ConfigurationError("increment_stats needs at least one grid")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ConfigurationError("all grids must share the same shape")
    pooled = np.stack(arrays).reshape(-1, shape[-1])
    return IncrementStats(
        pooled.mean(axis=0), pooled.var(axis=0), float(np.abs(pooled).max()), pooled.shape[0]
    )
