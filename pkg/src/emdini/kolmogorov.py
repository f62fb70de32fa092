"""Implicit finite differences for the 1-D backward Kolmogorov equation.

Solves  u_t + b u_x + (1/2) sigma^2 u_xx = -f  on [t0, t1] x [-L, L]  with
u(t1, .) = 0 and reflecting (homogeneous Neumann) boundaries, then measures
sup |u_x| to probe how the gradient scales with the interval length.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigurationError, DiscretizationError


def _const(value, t, x):
    return np.full_like(x, value, dtype=float)


def _sin_source(t, x):
    return np.sin(x)


def _holder_source(alpha, t, x):
    return np.sign(x) * np.minimum(np.abs(x), 1.0) ** alpha


SOURCES = {
    "zero": lambda: partial(_const, 0.0),
    "constant": lambda c=1.0: partial(_const, float(c)),
    "sin": lambda: _sin_source,
    "holder": lambda alpha=0.5: partial(_holder_source, float(alpha)),
}


def source_by_name(name: str, **params) -> Callable:
    if name not in SOURCES:
        raise ConfigurationError(f"unknown source {name!r}; expected one of {sorted(SOURCES)}")
    try:
        return SOURCES[name](**params)
    except TypeError:
        raise ConfigurationError(f"bad parameters {params} for source {name!r}") from None


@dataclass(frozen=True)
class PdeProblem:
    t0: float
    t1: float
    L: float
    n_x: int
    drift: Callable = partial(_const, 0.0)
    diffusion: Callable = partial(_const, 1.0)
    source: Callable = partial(_const, 0.0)
    sigma_min: float = 1e-6

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ConfigurationError(f"need t0 < t1, got [{self.t0}, {self.t1}]")
        if self.n_x < 3:
            raise ConfigurationError("need at least 3 spatial nodes")
        if not self.L > 0:
            raise ConfigurationError("half-width L must be positive")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n_x)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.n_x - 1)

    def with_length(self, length: float) -> "PdeProblem":
        """Same problem on [t1 - length, t1]."""
        return replace(self, t0=self.t1 - length)


class PdeSolution(NamedTuple):
    x: np.ndarray
    times: np.ndarray
    u: np.ndarray  # (n_t + 1, n_x), row m at times[m]
    grad_u: np.ndarray
    sup_grad: float


def solve_backward(problem: PdeProblem, n_t: int) -> PdeSolution:
    """March from t1 down to t0 with (I - dt L_h) u^m = u^{m+1} + dt f(t_m)."""
    if n_t < 1:
        raise ConfigurationError("n_t must be >= 1")
    x = problem.x
    dx = problem.dx
    nx = x.size
    dt = (problem.t1 - problem.t0) / n_t
    times = problem.t0 + dt * np.arange(n_t + 1)
    times[-1] = problem.t1
    u = np.empty((n_t + 1, nx))
    u[-1] = 0.0
    for m in range(n_t - 1, -1, -1):
        t = times[m]
        b = np.asarray(problem.drift(t, x), dtype=float) * np.ones(nx)
        sig = np.asarray(problem.diffusion(t, x), dtype=float) * np.ones(nx)
        a2 = sig * sig
        if np.any(a2 < problem.sigma_min ** 2):
            raise ConfigurationError(f"diffusion degenerates below sigma_min at t={t}")
        half_diff = 0.5 * a2 / dx ** 2
        adv = b / (2.0 * dx)
        lower = -dt * (half_diff - adv)
        upper = -dt * (half_diff + adv)
        diag = 1.0 + 2.0 * dt * half_diff
        # reflecting boundaries: ghost node mirrors its interior neighbour
        upper[0] = -2.0 * dt * half_diff[0]
        lower[-1] = -2.0 * dt * half_diff[-1]
        off = np.abs(lower) + np.abs(upper)
        off[0] = abs(upper[0])
        off[-1] = abs(lower[-1])
        if np.any(diag < off):
            raise DiscretizationError(
                f"implicit system lost diagonal dominance at t={t}; "
                f"cell Peclet number max|b| dx / sigma^2 = {np.max(np.abs(b) * dx / a2):.3g}, refine n_x"
            )
        ab = np.zeros((3, nx))
        ab[0, 1:] = upper[:-1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        rhs = u[m + 1] + dt * np.asarray(problem.source(t, x), dtype=float)
        u[m] = solve_banded((1, 1), ab, rhs)
    if not np.all(np.isfinite(u)):
        raise DiscretizationError("non-finite values in the finite-difference solution")
    grad = np.gradient(u, dx, axis=1)
    return PdeSolution(x, times, u, grad, float(np.max(np.abs(grad))))


class ScalingRow(NamedTuple):
    length: float
    sup_grad: float
    ratio: float


class ScalingResult(NamedTuple):
    rows: list
    spread: float  # max ratio / min ratio
    factor: float
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.spread <= self.factor

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["length", "sup_grad", "ratio"])
        for r in self.rows:
            w.writerow([repr(r.length), repr(r.sup_grad), repr(r.ratio)])
        return buf.getvalue()


def gradient_scaling_check(
    template: PdeProblem,
    lengths: Sequence[float],
    n_t: int = 200,
    factor: float = 2.0,
    workers: int = 1,
) -> ScalingResult:
    """Solve on each interval length and tabulate sup|u_x| / sqrt(length).

    The check passes when max(ratio) / min(ratio) <= ``factor``.  An
    identically zero ladder counts as spread 1.
    """
    lengths = [float(v) for v in lengths]
    if not lengths or any(v <= 0 for v in lengths):
        raise ConfigurationError("lengths must be positive")
    if any(b >= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigurationError("lengths must be strictly decreasing")
    problems = [template.with_length(v) for v in lengths]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            sols = list(pool.map(lambda pr: solve_backward(pr, n_t), problems))
    else:
        sols = [solve_backward(pr, n_t) for pr in problems]
    rows = [ScalingRow(v, s.sup_grad, s.sup_grad / math.sqrt(v)) for v, s in zip(lengths, sols)]
    ratios = np.array([r.ratio for r in rows])
    if np.all(ratios == 0):
        spread = 1.0
    elif np.any(ratios == 0):
        spread = math.inf
    else:
        spread = float(ratios.max() / ratios.min())
    grads = [r.sup_grad for r in rows]
    monotone = all(b <= a for a, b in zip(grads, grads[1:]))
    return ScalingResult(rows, spread, float(factor), monotone)
