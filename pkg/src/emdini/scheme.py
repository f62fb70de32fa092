"""Euler-Maruyama recursion, its continuous-time interpolant and exact GBM.

The batched kernels work on arrays of shape ``(R, n, d)`` (replicas, steps,
coordinates); the single-path functions wrap them for one
:class:`~emdini.path.BrownianGrid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InterpolationError, SimulationBlowup
from .model import SdeModel
from .path import BrownianGrid, cumulative

BLOWUP_LEVEL = 1e12

EULER_MARUYAMA = "euler_maruyama"
EXACT_GBM = "exact_gbm"
EXACT = "exact"
FINE_REFERENCE = "fine_reference"
INTERPOLANT = "em_interpolant"


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    scheme: str
    step: float | None
    x0: np.ndarray

    def __post_init__(self):
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise ConfigurationError("times and states disagree in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("monitoring times must increase strictly")
        if not np.all(np.isfinite(self.states)):
            raise ConfigurationError("trajectory states must be finite")

    @property
    def dimension(self) -> int:
        return self.states.shape[1]


def _as_x0(x0, d):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (d,):
        raise ConfigurationError(f"x0 has shape {x0.shape}, expected ({d},)")
    return x0


def em_paths(model: SdeModel, increments: np.ndarray, dt: float, x0, record_every: int = 1):
    """Run the EM recursion on every replica of ``increments`` (R, n, d).

    Returns ``(states, blown, first_bad)``: states of shape
    ``(R, n // record_every + 1, d)`` recorded at steps that are multiples of
    ``record_every``; ``blown`` flags replicas whose state became non-finite
    or exceeded ``BLOWUP_LEVEL``; ``first_bad`` is the first offending step
    (-1 when none).  Blown replicas are reset to x0 and carried along so the
    batch stays finite; their values are meaningless.
    """
    R, n, d = increments.shape
    if d != model.dimension:
        raise ConfigurationError(f"grid dimension {d} != model dimension {model.dimension}")
    if n % record_every:
        raise ConfigurationError(f"record_every={record_every} does not divide {n} steps")
    x0 = _as_x0(x0, d)
    y = np.broadcast_to(x0, (R, d)).copy()
    out = np.empty((R, n // record_every + 1, d))
    out[:, 0] = y
    blown = np.zeros(R, dtype=bool)
    first_bad = np.full(R, -1)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            t = i * dt
            b = model.drift(t, y)
            s = model.diffusion(t, y)
            if d == 1:
                y = y + b * dt + s[..., 0] * increments[:, i]
            else:
                y = y + b * dt + (s @ increments[:, i, :, None])[..., 0]
            bad = ~(np.abs(y).max(axis=-1) <= BLOWUP_LEVEL)
            if bad.any():
                new = bad & ~blown
                first_bad[new] = i + 1
                blown |= bad
                y[bad] = x0
            if (i + 1) % record_every == 0:
                out[:, (i + 1) // record_every] = y
    return out, blown, first_bad


def em_simulate(model: SdeModel, grid: BrownianGrid, x0) -> Trajectory:
    """EM trajectory on the grid points: Y_{i+1} = Y_i + b dt + sigma dW_i."""
    states, blown, first_bad = em_paths(model, grid.increments[None], grid.dt, x0)
    if blown[0]:
        raise SimulationBlowup(f"{model.name}: EM path blew up at step {first_bad[0]}", int(first_bad[0]))
    return Trajectory(grid.times, states[0], EULER_MARUYAMA, grid.dt, _as_x0(x0, grid.d))


def em_interpolate(traj: Trajectory, model: SdeModel, grid: BrownianGrid, s: float) -> np.ndarray:
    """Continuous-time EM value at ``s``, which must lie on the root fine grid.

    Y_s = Y_eta + b(eta, Y_eta)(s - eta) + sigma(eta, Y_eta)(W_s - W_eta)
    with eta the coarse grid point at or below ``s``.
    """
    if traj.scheme != EULER_MARUYAMA:
        raise ConfigurationError(f"interpolation needs an EM trajectory, got {traj.scheme}")
    factor = grid.factor
    root = grid.root_increments
    n_fine = root.shape[0]
    dt_fine = grid.T / n_fine
    if not 0 <= s <= grid.T * (1 + 1e-12):
        raise InterpolationError(f"s={s} outside [0, {grid.T}]")
    q = s / dt_fine
    k = int(round(q))
    if abs(q - k) > 1e-9 * max(1.0, q):
        raise InterpolationError(f"s={s} is not on the fine grid of step {dt_fine}")
    j, m = divmod(k, factor)
    if m == 0:
        return traj.states[j].copy()
    t_eta = j * grid.dt
    y = traj.states[j]
    dw = np.cumsum(root[j * factor : j * factor + m], axis=0)[-1]
    b = model.drift(t_eta, y)
    sig = model.diffusion(t_eta, y)
    return y + b * (m * dt_fine) + sig @ dw


def em_interpolant_paths(model: SdeModel, coarse: np.ndarray, root: np.ndarray, factor: int, dt: float):
    """Interpolant of batched coarse states (R, N+1, d) at every fine point.

    ``root`` holds the fine increments (R, N*factor, d).  The result has
    shape (R, N*factor + 1, d) and equals ``coarse`` on coarse points.
    """
    R, N1, d = coarse.shape
    N = N1 - 1
    if root.shape[1] != N * factor:
        raise ConfigurationError("fine increments do not match the coarse grid")
    dt_fine = dt / factor
    out = np.empty((R, N * factor + 1, d))
    blocks = root.reshape(R, N, factor, d)
    offsets = np.cumsum(blocks, axis=2)
    lag = np.arange(1, factor) * dt_fine
    for j in range(N):
        y = coarse[:, j]
        b = model.drift(j * dt, y)
        sig = model.diffusion(j * dt, y)
        out[:, j * factor] = y
        if factor > 1:
            dw = offsets[:, j, :-1]
            noise = (sig[:, None] @ dw[..., None])[..., 0]
            out[:, j * factor + 1 : (j + 1) * factor] = y[:, None] + b[:, None] * lag[None, :, None] + noise
    out[:, -1] = coarse[:, -1]
    return out


def exact_gbm(mu: float, nu: float, grid: BrownianGrid, x0) -> Trajectory:
    """x0 exp((mu - nu^2/2) t + nu W_t) on the grid, coupled to its path."""
    x0 = _as_x0(x0, grid.d)
    times = grid.times
    w = grid.brownian_path()
    states = x0 * np.exp((mu - 0.5 * nu * nu) * times[:, None] + nu * w)
    return Trajectory(times, states, EXACT_GBM, None, x0)


def exact_trajectory(model: SdeModel, grid: BrownianGrid, x0) -> Trajectory:
    if model.exact is None:
        raise ConfigurationError(f"model {model.name} has no exact solution")
    x0 = _as_x0(x0, grid.d)
    states = model.exact(grid.times, grid.brownian_path(), x0)
    return Trajectory(grid.times, states, EXACT, None, x0)


def _common_indices(big, small, T):
    idx = np.searchsorted(big, small)
    idx = np.clip(idx, 0, big.size - 1)
    lower = np.clip(idx - 1, 0, big.size - 1)
    pick = np.where(np.abs(big[lower] - small) < np.abs(big[idx] - small), lower, idx)
    if not np.all(np.abs(big[pick] - small) <= 1e-9 * max(T, 1.0)):
        return None
    return pick


def sup_distance(a: Trajectory, b: Trajectory, p: float = 1.0) -> float:
    """max over shared monitoring times of |a(t) - b(t)|^p (Euclidean norm)."""
    if p < 1:
        raise ConfigurationError("p must be >= 1")
    if a.dimension != b.dimension:
        raise ConfigurationError("trajectories differ in dimension")
    T = float(max(a.times[-1], b.times[-1]))
    if a.times.size == b.times.size and np.allclose(a.times, b.times, rtol=0, atol=1e-9 * max(T, 1.0)):
        diff = a.states - b.states
    else:
        big, small = (a, b) if a.times.size > b.times.size else (b, a)
        pick = _common_indices(big.times, small.times, T)
        if pick is None:
            raise ConfigurationError("monitoring grids are incompatible: neither contains the other")
        diff = big.states[pick] - small.states
    return float(np.max(np.linalg.norm(diff, axis=1)) ** p)


def sup_norm_paths(diff: np.ndarray) -> np.ndarray:
    """Pathwise max over time of the Euclidean norm; input (R, n, d)."""
    return np.sqrt(np.max(np.sum(diff * diff, axis=-1), axis=-1))


def trajectories_from_paths(times, states, scheme, step, x0):
    return [Trajectory(np.asarray(times), s, scheme, step, np.asarray(x0, dtype=float)) for s in states]
