"""SDE coefficient pairs, the built-in model zoo and the cut-off truncation.

Coefficients are vectorized over leading axes: ``drift(t, x)`` maps a float
``t`` and an array ``x`` of shape ``(..., d)`` to shape ``(..., d)``, and
``diffusion(t, x)`` returns shape ``(..., d, d)``.  All zoo coefficients are
module-level functions bound with :func:`functools.partial`, so models pickle
cleanly into worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigurationError, ModelDefinitionError
from .modulus import ModulusSpec, eval_modulus, holder_dini


@dataclass(frozen=True)
class SdeModel:
    """Drift b(t, x) and diffusion sigma(t, x) with regularity metadata.

    ``exact`` is an optional pathwise solution: called as
    ``exact(times, w, x0)`` with ``w`` the Brownian path at ``times`` (shape
    ``(..., n, d)``) it returns the solution at those times.
    """

    dimension: int
    drift: Callable
    diffusion: Callable
    name: str = "custom"
    drift_bound: float | None = None
    diffusion_bound: float | None = None
    spatial_modulus: ModulusSpec = field(default_factory=lambda: ModulusSpec.power(1.0))
    holder_beta: float = 0.5
    time_modulus: ModulusSpec = field(default_factory=lambda: ModulusSpec.power(1.0))
    nonsingular_claim: bool = True
    linear_growth_const: float | None = None
    exact: Callable | None = field(default=None, compare=False)
    params: tuple = ()

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ConfigurationError(f"dimension must be a positive integer, got {self.dimension}")
        if not 0 < self.holder_beta < 1:
            raise ConfigurationError(f"holder_beta must lie in the open interval (0, 1), got {self.holder_beta}")

    @property
    def drift_modulus(self) -> ModulusSpec:
        return holder_dini(self.holder_beta, self.spatial_modulus)


def eval_drift(model: SdeModel, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.asarray(model.drift(t, x), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ModelDefinitionError(f"drift of {model.name} is not finite at t={t}, x={x}", t, x)
    return out


def eval_diffusion(model: SdeModel, t: float, x, diagnostic: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.asarray(model.diffusion(t, x), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ModelDefinitionError(f"diffusion of {model.name} is not finite at t={t}, x={x}", t, x)
    if diagnostic and model.nonsingular_claim:
        det = np.linalg.det(out)
        if np.any(np.abs(det) < 1e-12):
            raise ModelDefinitionError(
                f"diffusion of {model.name} is numerically singular at t={t}, x={x}", t, x
            )
    return out


def hs_norm(m) -> np.ndarray:
    """Hilbert-Schmidt norm over the last two axes."""
    m = np.asarray(m)
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


# ---------------------------------------------------------------------------
# cut-off functions

CUTOFF_SHAPES = ("smooth_polynomial", "cosine_taper")


@dataclass(frozen=True)
class CutoffSpec:
    """Cut-off chi: 1 on [0, 1], 0 on [2, inf), nonincreasing in between.

    ``smooth_polynomial`` uses the quintic smoothstep (C^2 at both joins);
    ``cosine_taper`` uses a half cosine (C^1).
    """

    shape: str = "smooth_polynomial"

    def __post_init__(self):
        if self.shape not in CUTOFF_SHAPES:
            raise ConfigurationError(f"unknown cutoff shape {self.shape!r}; expected one of {CUTOFF_SHAPES}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        s = np.clip(r - 1.0, 0.0, 1.0)
        if self.shape == "smooth_polynomial":
            ramp = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
        else:
            ramp = 0.5 * (1.0 + np.cos(np.pi * s))
        out = np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, ramp))
        return out if out.ndim else float(out)


def _truncated_drift(model, k, cutoff, t, x):
    weight = cutoff(np.linalg.norm(x, axis=-1) / k)
    return model.drift(t, x) * np.asarray(weight)[..., None]


def _truncated_diffusion(model, k, cutoff, t, x):
    weight = cutoff(np.linalg.norm(x, axis=-1) / k)
    return model.diffusion(t, np.asarray(weight)[..., None] * x)


def truncate_model(model: SdeModel, k: float, cutoff: CutoffSpec | None = None) -> SdeModel:
    """Localized coefficients b(t,x) chi(|x|/k) and sigma(t, chi(|x|/k) x).

    The drift is damped by multiplication while the diffusion argument is
    contracted toward the origin; the two constructions are deliberately
    different.
    """
    if not k >= 1:
        raise ConfigurationError(f"truncation radius must be >= 1, got {k}")
    cutoff = cutoff or CutoffSpec()
    bound = None
    if model.linear_growth_const is not None:
        bound = model.linear_growth_const * (1.0 + 2.0 * k)
    return replace(
        model,
        name=f"{model.name}[k={k:g}]",
        drift=partial(_truncated_drift, model, float(k), cutoff),
        diffusion=partial(_truncated_diffusion, model, float(k), cutoff),
        drift_bound=bound if model.drift_bound is None else min(bound or math.inf, model.drift_bound),
        diffusion_bound=bound if model.diffusion_bound is None else min(bound or math.inf, model.diffusion_bound),
        exact=None,
    )


# ---------------------------------------------------------------------------
# zoo coefficient functions (module level so that partials pickle)


def _zero_drift(t, x):
    return np.zeros_like(x)


def _identity_diffusion(t, x):
    return _diag(np.ones_like(x))


def _diag(v):
    d = v.shape[-1]
    if d == 1:
        return v[..., None]
    out = np.zeros(v.shape + (d,))
    np.einsum("...ii->...i", out)[...] = v
    return out


def _sin_drift(t, x):
    return np.sin(x)


def _bounded_nondeg_diffusion(t, x):
    return _diag(1.0 + 0.5 * np.sin(x))


def _gbm_drift(mu, t, x):
    return mu * x


def _gbm_diffusion(nu, t, x):
    return _diag(nu * x)


def _gbm_exact(mu, nu, times, w, x0):
    times = np.asarray(times, dtype=float)[:, None]
    return np.asarray(x0, dtype=float) * np.exp((mu - 0.5 * nu * nu) * times + nu * w)


def _bm_exact(times, w, x0):
    return np.asarray(x0, dtype=float) + w


def _soft_unit(u):
    # |u| / (1 + u^4)^(1/4): 1-Lipschitz, ~|u| near 0, -> 1 at infinity
    a = np.abs(u)
    return a / np.sqrt(np.sqrt(1.0 + a ** 4))


def _holder_drift(beta, t, x):
    return _soft_unit(x) ** beta


def _dini_profile(beta, gamma, x):
    m = np.minimum(np.abs(x), 1.0)
    with np.errstate(divide="ignore"):
        log_term = np.log(math.e + 1.0 / m)
    return np.where(m > 0, m ** beta * log_term ** -gamma, 0.0)


def _dini_drift(beta, gamma, t, x):
    return _dini_profile(beta, gamma, x)


class ZooEntry(NamedTuple):
    factory: Callable
    defaults: dict
    regularity: str
    regime: str
    description: str


def _pure_bm(d=1):
    return SdeModel(
        dimension=d,
        drift=_zero_drift,
        diffusion=_identity_diffusion,
        name="pure_bm",
        drift_bound=0.0,
        diffusion_bound=math.sqrt(d),
        spatial_modulus=ModulusSpec.power(0.5),
        holder_beta=0.5,
        exact=_bm_exact,
    )


def _sin_bounded(d=1, beta=0.5):
    # s^beta * s^(1-beta) = s dominates |sin x - sin y|
    return SdeModel(
        dimension=d,
        drift=_sin_drift,
        diffusion=_identity_diffusion,
        name="sin_bounded",
        drift_bound=math.sqrt(d),
        diffusion_bound=math.sqrt(d),
        spatial_modulus=ModulusSpec.power(1.0 - beta),
        holder_beta=beta,
    )


def _bounded_nondeg(d=1):
    return SdeModel(
        dimension=d,
        drift=_sin_drift,
        diffusion=_bounded_nondeg_diffusion,
        name="bounded_nondeg",
        drift_bound=math.sqrt(d),
        diffusion_bound=1.5 * math.sqrt(d),
        spatial_modulus=ModulusSpec.power(0.5),
        holder_beta=0.5,
    )


def _gbm(mu=0.1, nu=0.2, d=1):
    return SdeModel(
        dimension=d,
        drift=partial(_gbm_drift, float(mu)),
        diffusion=partial(_gbm_diffusion, float(nu)),
        name="gbm",
        spatial_modulus=ModulusSpec.power(0.5),
        holder_beta=0.5,
        nonsingular_claim=False,
        linear_growth_const=abs(mu) + abs(nu),
        exact=partial(_gbm_exact, float(mu), float(nu)),
        params=(("mu", float(mu)), ("nu", float(nu))),
    )


def _holder(beta=0.5, d=1):
    # |b(x) - b(y)| <= |x - y|^beta = s^(beta/2) * s^(beta/2)
    return SdeModel(
        dimension=d,
        drift=partial(_holder_drift, float(beta)),
        diffusion=_identity_diffusion,
        name="holder_drift",
        drift_bound=math.sqrt(d),
        diffusion_bound=math.sqrt(d),
        spatial_modulus=ModulusSpec.power(beta / 2),
        holder_beta=beta / 2,
        params=(("beta", float(beta)),),
    )


def _dini(beta=0.5, gamma=2.0, d=1):
    return SdeModel(
        dimension=d,
        drift=partial(_dini_drift, float(beta), float(gamma)),
        diffusion=_identity_diffusion,
        name="dini_drift",
        drift_bound=math.sqrt(d) * (math.log(math.e + 1.0)) ** -gamma,
        diffusion_bound=math.sqrt(d),
        spatial_modulus=ModulusSpec.logpower(gamma),
        holder_beta=beta,
        params=(("beta", float(beta)), ("gamma", float(gamma))),
    )


ZOO = {
    "pure_bm": ZooEntry(_pure_bm, {"d": 1}, "constant (Lipschitz)", "Assumption 2.1 / Theorem 2.2",
                        "b = 0, sigma = I; exact solution x0 + W"),
    "sin_bounded": ZooEntry(_sin_bounded, {"d": 1, "beta": 0.5}, "Lipschitz", "Assumption 2.1 / Theorem 2.2",
                            "b = sin(x), sigma = I"),
    "bounded_nondeg": ZooEntry(_bounded_nondeg, {"d": 1}, "Lipschitz", "Assumption 2.1 / Theorem 2.2",
                               "b = sin(x), sigma = (1 + 0.5 sin x) I"),
    "holder_drift": ZooEntry(_holder, {"beta": 0.5, "d": 1}, "Holder-Dini", "Assumption 2.1 / Theorem 2.2",
                             "b = m(x)^beta with m a smoothed min(|x|, 1), sigma = I"),
    "dini_drift": ZooEntry(_dini, {"beta": 0.5, "gamma": 2.0, "d": 1}, "Holder-Dini",
                           "Assumption 2.1 / Theorem 2.2",
                           "b = m^beta log(e + 1/m)^-gamma with m = min(|x|, 1), sigma = I"),
    "gbm": ZooEntry(_gbm, {"mu": 0.1, "nu": 0.2, "d": 1}, "linear growth", "linear growth / Theorem 2.3",
                    "b = mu x, sigma = nu x; exact lognormal solution"),
}


def zoo(name: str, **params) -> SdeModel:
    """Instantiate a registered model, e.g. ``zoo("gbm", mu=0.1, nu=0.2)``."""
    if name not in ZOO:
        raise ConfigurationError(f"unknown model {name!r}; registry: {', '.join(sorted(ZOO))}")
    entry = ZOO[name]
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ConfigurationError(
            f"model {name!r} does not take {sorted(unknown)}; parameters: {sorted(entry.defaults)}"
        )
    kwargs = {**entry.defaults, **params}
    if "d" in kwargs:
        kwargs["d"] = int(kwargs["d"])
    return entry.factory(**kwargs)


# ---------------------------------------------------------------------------
# sampled regularity checks


class RegularityReport(NamedTuple):
    drift_ratio: float
    diffusion_ratio: float
    n_used: int
    n_skipped: int
    max_drift: float
    max_diffusion: float
    min_abs_det: float

    def consistent(self, tolerance=1e-9):
        return self.drift_ratio <= 1 + tolerance and self.diffusion_ratio <= 1 + tolerance


def _ball(rng, n, d, radius):
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return direction * r[:, None]


def verify_spatial_regularity(
    model: SdeModel, n_pairs: int, radius: float = 1.0, seed: int = 0, T: float = 1.0
) -> RegularityReport:
    """Sample the spatial regularity ratios on pairs inside a ball.

    Pairs are drawn as a uniform point plus an offset whose length is
    log-uniform in [1e-8, domain_cap]; points pushed outside the ball are
    projected back.  Ratios above 1 mean the claimed moduli are violated.
    """
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    d = model.dimension
    cap = model.spatial_modulus.domain_cap
    x = _ball(rng, n_pairs, d, radius)
    step = np.exp(rng.uniform(math.log(1e-8), math.log(cap), n_pairs))
    offset = rng.standard_normal((n_pairs, d))
    offset *= (step / np.linalg.norm(offset, axis=1))[:, None]
    y = x + offset
    norm_y = np.linalg.norm(y, axis=1)
    outside = norm_y > radius
    y[outside] *= (radius / norm_y[outside])[:, None]
    t = rng.uniform(0.0, T, n_pairs)

    dist = np.linalg.norm(x - y, axis=1)
    keep = dist >= 1e-14
    drift_ratio = diff_ratio = 0.0
    max_b = max_s = 0.0
    min_det = math.inf
    drift_mod = model.drift_modulus
    for i in np.flatnonzero(keep):
        bx, by = eval_drift(model, t[i], x[i]), eval_drift(model, t[i], y[i])
        sx, sy = eval_diffusion(model, t[i], x[i]), eval_diffusion(model, t[i], y[i])
        drift_ratio = max(drift_ratio, _ratio(np.linalg.norm(bx - by), eval_modulus(drift_mod, dist[i])))
        diff_ratio = max(diff_ratio, _ratio(hs_norm(sx - sy), eval_modulus(model.spatial_modulus, dist[i])))
        max_b = max(max_b, np.linalg.norm(bx), np.linalg.norm(by))
        max_s = max(max_s, hs_norm(sx), hs_norm(sy))
        min_det = min(min_det, abs(np.linalg.det(sx)), abs(np.linalg.det(sy)))
    return RegularityReport(drift_ratio, diff_ratio, int(keep.sum()), int((~keep).sum()),
                            float(max_b), float(max_s), float(min_det))


def verify_time_regularity(
    model: SdeModel, n_samples: int, seed: int = 0, T: float = 1.0, radius: float = 1.0
) -> RegularityReport:
    """Sample |b(s,x)-b(t,x)| + ||sigma(s,x)-sigma(t,x)||_HS against phi(|s-t|).

    The time ratio is reported as ``drift_ratio``; ``diffusion_ratio`` is 0.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    d = model.dimension
    x = _ball(rng, n_samples, d, radius)
    cap = min(model.time_modulus.domain_cap, T)
    h = np.exp(rng.uniform(math.log(1e-10), math.log(cap), n_samples))
    s = rng.uniform(0.0, T, n_samples)
    t = np.where(s + h <= T, s + h, s - h)
    t = np.clip(t, 0.0, T)
    gap = np.abs(s - t)
    keep = gap >= 1e-14
    worst = 0.0
    max_b = max_s = 0.0
    for i in np.flatnonzero(keep):
        b1, b2 = eval_drift(model, s[i], x[i]), eval_drift(model, t[i], x[i])
        s1, s2 = eval_diffusion(model, s[i], x[i]), eval_diffusion(model, t[i], x[i])
        lhs = np.linalg.norm(b1 - b2) + hs_norm(s1 - s2)
        worst = max(worst, _ratio(lhs, eval_modulus(model.time_modulus, gap[i])))
        max_b = max(max_b, np.linalg.norm(b1))
        max_s = max(max_s, hs_norm(s1))
    return RegularityReport(worst, 0.0, int(keep.sum()), int((~keep).sum()),
                            float(max_b), float(max_s), math.nan)


def _ratio(num, den):
    num = float(num)
    if num == 0.0:
        return 0.0
    if den <= 0.0:
        return math.inf
    return num / float(den)
