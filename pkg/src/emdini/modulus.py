"""Moduli of continuity and numeric Dini-class checks.

A modulus is a nondecreasing map phi: [0, cap] -> [0, inf) with phi(0) = 0.
Arguments beyond ``domain_cap`` are clamped, since moduli only matter for
small increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import ConfigurationError, NumericError

KINDS = ("linear", "power", "logpower", "product", "custom")

# name of the scalar parameter carried by each kind
_PARAM_NAMES = {"linear": "c", "power": "alpha", "logpower": "gamma", "product": "beta"}

CONVERGENT = "convergent"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"

DEFAULT_CUTOFFS = tuple(10.0 ** -k for k in (1, 2, 4, 8, 16, 32, 64, 128, 256))


@dataclass(frozen=True)
class ModulusSpec:
    """Parametric modulus of continuity.

    Use the constructors :meth:`linear`, :meth:`power`, :meth:`logpower`,
    :meth:`product` and :meth:`custom` rather than the raw fields.
    """

    kind: str
    param: float | None = None
    inner: ModulusSpec | None = None
    points: tuple[tuple[float, float], ...] = ()
    domain_cap: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown modulus kind {self.kind!r}; expected one of {KINDS}")
        cap = self.domain_cap
        if not (math.isfinite(cap) and cap > 0):
            raise ConfigurationError(f"domain_cap must be positive and finite, got {cap!r}")
        if self.kind in _PARAM_NAMES:
            p = self.param
            name = _PARAM_NAMES[self.kind]
            if p is None or not math.isfinite(p):
                raise ConfigurationError(f"{self.kind} modulus needs a finite {name}")
            if self.kind == "linear" and p <= 0:
                raise ConfigurationError(f"linear modulus needs c > 0, got {p}")
            if self.kind == "power" and not 0 < p <= 1:
                raise ConfigurationError(f"power modulus needs alpha in (0, 1], got {p}")
            if self.kind == "logpower":
                if p <= 0:
                    raise ConfigurationError(f"logpower modulus needs gamma > 0, got {p}")
                if cap >= math.e:
                    raise ConfigurationError("logpower modulus is only monotone below e; lower domain_cap")
            if self.kind == "product":
                if not 0 < p < 1:
                    raise ConfigurationError(f"product modulus needs beta in (0, 1), got {p}")
                if self.inner is None:
                    raise ConfigurationError("product modulus needs an inner modulus")
        if self.kind == "custom":
            self._validate_table()

    def _validate_table(self):
        pts = self.points
        if len(pts) < 2:
            raise ConfigurationError("custom modulus needs at least two tabulated points")
        s = np.array([p[0] for p in pts], dtype=float)
        v = np.array([p[1] for p in pts], dtype=float)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ConfigurationError("custom modulus table must be finite")
        if s[0] != 0.0 or v[0] != 0.0:
            raise ConfigurationError("custom modulus table must start at (0, 0)")
        if np.any(np.diff(s) <= 0):
            raise ConfigurationError("custom modulus abscissae must be strictly increasing")
        if np.any(np.diff(v) < 0):
            raise ConfigurationError("custom modulus values must be nondecreasing")

    # constructors

    @classmethod
    def linear(cls, c=1.0, domain_cap=1.0):
        return cls("linear", float(c), domain_cap=domain_cap)

    @classmethod
    def power(cls, alpha, domain_cap=1.0):
        return cls("power", float(alpha), domain_cap=domain_cap)

    @classmethod
    def logpower(cls, gamma, domain_cap=1.0):
        """phi(s) = log(e/s)^(-gamma)."""
        return cls("logpower", float(gamma), domain_cap=domain_cap)

    @classmethod
    def product(cls, beta, inner):
        """phi(s) = s^beta * inner(s)."""
        return cls("product", float(beta), inner=inner, domain_cap=inner.domain_cap)

    @classmethod
    def custom(cls, points, domain_cap=None):
        pts = [(float(a), float(b)) for a, b in points]
        if pts and pts[0][0] > 0:
            pts.insert(0, (0.0, 0.0))
        if domain_cap is None:
            domain_cap = pts[-1][0] if pts else 1.0
        return cls("custom", points=tuple(pts), domain_cap=float(domain_cap))

    @cached_property
    def _interp(self):
        s, v = zip(*self.points)
        return PchipInterpolator(np.array(s), np.array(v), extrapolate=False)

    @property
    def params(self):
        if self.kind == "custom":
            return {"points": [list(p) for p in self.points]}
        return {_PARAM_NAMES[self.kind]: self.param}

    def __call__(self, s):
        return eval_modulus(self, s)


def eval_modulus(spec: ModulusSpec, s):
    """Evaluate ``spec`` at ``s`` (scalar or array), clamping at the cap."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ConfigurationError("modulus argument must be nonnegative")
    out = _eval(spec, np.minimum(arr, spec.domain_cap))
    if np.ndim(s) == 0:
        return float(out)
    return out


def _eval(spec, c):
    kind = spec.kind
    if kind == "linear":
        return spec.param * c
    if kind == "power":
        return c ** spec.param
    if kind == "logpower":
        with np.errstate(divide="ignore"):
            base = 1.0 - np.log(c)
        return np.where(c > 0, base ** -spec.param, 0.0)
    if kind == "product":
        inner = eval_modulus(spec.inner, c)
        return c ** spec.param * inner
    cap = min(spec.domain_cap, spec.points[-1][0])
    cc = np.minimum(c, cap)
    return np.where(cc > 0, spec._interp(cc), 0.0)


def holder_dini(beta: float, inner: ModulusSpec) -> ModulusSpec:
    """Composite modulus s -> s^beta * inner(s) used for the drift."""
    if not 0 < beta < 1:
        raise ConfigurationError(f"beta must lie in (0, 1), got {beta}")
    return ModulusSpec.product(beta, inner)


def is_monotone(spec: ModulusSpec, grid=None, tol=1e-12) -> bool:
    if grid is None:
        grid = np.linspace(0.0, spec.domain_cap, 1025)
    vals = eval_modulus(spec, np.sort(np.asarray(grid, dtype=float)))
    return bool(np.all(np.diff(vals) >= -tol))


@dataclass(frozen=True)
class DiniVerdict:
    status: str
    integral_estimate: float
    tail_growth_exponent: float
    partials: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.status == CONVERGENT and not (
            math.isfinite(self.integral_estimate) and self.integral_estimate >= 0
        ):
            raise NumericError("convergent verdict with invalid integral estimate")


def check_dini_integral(
    spec: ModulusSpec,
    cutoffs=DEFAULT_CUTOFFS,
    quad_tol: float = 1e-8,
    divergence_threshold: float = 1.0,
    divergence_exponent: float = -0.1,
) -> DiniVerdict:
    """Numerically classify the integral of phi(s)/s over (0, 1).

    Partial integrals over [c, 1] are computed for every cutoff ``c`` after
    the substitution s = exp(-u), which turns the integral into
    ``int_0^log(1/c) phi(exp(-u)) du``.  The verdict is

    * convergent when the last two partials agree within ``quad_tol``;
    * divergent when the growth rate dI/dlog(u) is not decaying (fitted
      exponent at least ``divergence_exponent``) and the partials grew by
      more than ``divergence_threshold`` across the ladder;
    * inconclusive otherwise.

    ``tail_growth_exponent`` is the fitted exponent of dI/dlog(u) against
    log(u) over the deepest cutoffs; it is about 1 - gamma for
    ``logpower(gamma)`` and very negative for power moduli.
    """
    cuts = np.asarray(cutoffs, dtype=float)
    if cuts.ndim != 1 or cuts.size < 2:
        raise ConfigurationError("need at least two cutoffs")
    if quad_tol <= 0:
        raise ConfigurationError("quad_tol must be positive")
    if np.any(np.diff(cuts) >= 0) or cuts[0] > 1 or cuts[-1] < np.finfo(float).tiny:
        raise ConfigurationError("cutoffs must decrease strictly within (tiny, 1]")

    def integrand(u):
        val = _eval(spec, np.minimum(math.exp(-u), spec.domain_cap))
        val = float(val)
        if not math.isfinite(val):
            raise NumericError(f"non-finite integrand at s = exp(-{u})")
        return val

    upper = -np.log(cuts)
    partials = []
    total = 0.0
    lo = 0.0
    seg_tol = quad_tol / (10 * len(upper))
    for hi in upper:
        if hi > lo:
            piece, _ = integrate.quad(integrand, lo, hi, epsabs=seg_tol, epsrel=1e-13, limit=500)
            total += piece
        partials.append(total)
        lo = hi
    partials = np.array(partials)

    exponent = _growth_exponent(upper, partials)
    if abs(partials[-1] - partials[-2]) <= quad_tol:
        return DiniVerdict(CONVERGENT, float(partials[-1]), exponent, tuple(partials))
    grew = partials[-1] - partials[0]
    if math.isfinite(exponent) and exponent >= divergence_exponent and grew > divergence_threshold:
        return DiniVerdict(DIVERGENT, math.inf, exponent, tuple(partials))
    return DiniVerdict(INCONCLUSIVE, float(partials[-1]), exponent, tuple(partials))


def _growth_exponent(upper, partials, n_fit=4):
    # rate of partials per unit log(u), regressed on log(u)
    keep = upper > 0
    u = upper[keep]
    p = partials[keep]
    if u.size < 3:
        return math.nan
    rate = np.diff(p) / np.diff(np.log(u))
    mid = np.sqrt(u[1:] * u[:-1])
    ok = rate > 0
    rate, mid = rate[ok][-n_fit:], mid[ok][-n_fit:]
    if rate.size < 2:
        return -math.inf if np.all(np.diff(p)[-2:] == 0) else math.nan
    slope = np.polyfit(np.log(mid), np.log(rate), 1)[0]
    return float(slope)


class ConcavityViolation(NamedTuple):
    left: float
    right: float
    midpoint: float
    deficit: float


def check_concavity_sq(spec: ModulusSpec, grid, tol: float = 1e-12) -> list[ConcavityViolation]:
    """Midpoint test of concavity for phi^2 over all pairs of ``grid``.

    Returns every pair whose midpoint value falls below the chord by more
    than ``tol``; an empty list certifies midpoint concavity on the sample.
    """
    s = np.asarray(grid, dtype=float)
    if s.ndim != 1 or np.any(s <= 0) or np.any(np.diff(s) < 0):
        raise ConfigurationError("grid must be sorted and positive")
    if s.size and s[-1] > spec.domain_cap:
        raise ConfigurationError("grid exceeds the modulus domain_cap")
    sq = eval_modulus(spec, s) ** 2
    i, j = np.triu_indices(s.size, k=1)
    mid = 0.5 * (s[i] + s[j])
    chord = 0.5 * (sq[i] + sq[j])
    deficit = chord - eval_modulus(spec, mid) ** 2
    bad = np.flatnonzero(deficit > tol)
    return [
        ConcavityViolation(float(s[i[k]]), float(s[j[k]]), float(mid[k]), float(deficit[k]))
        for k in bad
    ]


def modulus_from_dict(block: dict) -> ModulusSpec:
    """Build a modulus from a ``{kind, params, domain_cap, inner}`` mapping."""
    if "kind" not in block:
        raise ConfigurationError("modulus block needs a 'kind'")
    kind = str(block["kind"]).lower()
    params = dict(block.get("params", {}))
    cap = float(block.get("domain_cap", 1.0))
    if kind == "custom":
        if "points" not in params:
            raise ConfigurationError("custom modulus needs params.points")
        return ModulusSpec.custom(params["points"], domain_cap=block.get("domain_cap"))
    if kind == "product":
        if "inner" not in block:
            raise ConfigurationError("product modulus needs an inner block")
        inner = modulus_from_dict(block["inner"])
        return holder_dini(float(params.get("beta", math.nan)), inner)
    if kind not in _PARAM_NAMES:
        raise ConfigurationError(f"unknown modulus kind {kind!r}; expected one of {KINDS}")
    name = _PARAM_NAMES[kind]
    if name not in params:
        raise ConfigurationError(f"{kind} modulus needs params.{name}")
    return ModulusSpec(kind, float(params[name]), domain_cap=cap)


def modulus_to_dict(spec: ModulusSpec) -> dict:
    out = {"kind": spec.kind, "params": spec.params, "domain_cap": spec.domain_cap}
    if spec.inner is not None:
        out["inner"] = modulus_to_dict(spec.inner)
    return out
