"""Experiment configuration files.

Grammar (one statement per line)::

    line    := blank | comment | key "=" value
    comment := "#" anything
    key     := name ("." name)*          name := [A-Za-z_][A-Za-z0-9_]*
    value   := item ("," item)*           (lists; a single item is a scalar)
    item    := number | fraction | power | word | pair
    fraction:= number "/" number          e.g. 1/16
    power   := number "^" number          e.g. 2^-4
    pair    := item ":" item (":" item)*  e.g. 1:0.4:0.6

Nested blocks are spelled with dotted keys (``model.params.mu = 0.1``).
Unknown keys are errors; every violation in a file is reported at once.
Keys under ``run.`` are run metadata written into manifests and are ignored
on input, so a manifest parses back into the config that produced it.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .kolmogorov import SOURCES
from .model import CUTOFF_SHAPES, ZOO
from .modulus import KINDS

EXPERIMENTS = ("rates", "one_step", "truncation", "kolmogorov", "check_modulus")
VERDICTS = ("convergent", "divergent", "inconclusive")

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_MODULUS_BLOCK = r"(model\.spatial_modulus|model\.time_modulus|modulus)((?:\.inner)*)"
_MODULUS_KEY = re.compile(_MODULUS_BLOCK + r"\.(kind|domain_cap|params\.[A-Za-z_]\w*)$")


class ConfigErrors(ConfigurationError):
    """All violations found in one configuration file."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def parse_number(text: str) -> float:
    t = text.strip()
    low = t.lower()
    if low in ("inf", "+inf"):
        return math.inf
    if low == "-inf":
        return -math.inf
    if "/" in t:
        a, b = t.split("/", 1)
        return float(a) / float(b)
    if "^" in t:
        a, b = t.split("^", 1)
        return float(a) ** float(b)
    return float(t)


def _int(text):
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _float(text):
    v = parse_number(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _float_list(text):
    return [_float(p) for p in text.split(",") if p.strip()]


def _word(choices):
    def conv(text):
        v = text.strip().lower()
        if v not in choices:
            raise ValueError(f"{text.strip()!r} is not one of {', '.join(choices)}")
        return v

    return conv


def _string(text):
    v = text.strip()
    if not v:
        raise ValueError("empty value")
    return v


def _band_list(text):
    out = {}
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"band {item.strip()!r} must be p:low:high")
        p, lo, hi = (parse_number(x) for x in parts)
        out[p] = (lo, hi)
    return out


def _points(text):
    pts = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 2:
            raise ValueError(f"point {item.strip()!r} must be s:value")
        pts.append((parse_number(parts[0]), parse_number(parts[1])))
    return pts


# key -> (converter, default); None default means "absent unless given"
SCHEMA = {
    "experiment": (_word(EXPERIMENTS), None),
    "T": (_float, 1.0),
    "x0": (_float_list, [0.5]),
    "delta_list": (_float_list, [2.0 ** -j for j in range(4, 10)]),
    "ref_factor": (_int, 64),
    "p_list": (_float_list, [1.0]),
    "replicas": (_int, 1000),
    "seed": (_int, 0),
    "chunk_size": (_int, 512),
    "monitor": (_word(("coarse", "fine")), "coarse"),
    "out": (_string, "results"),
    "k_list": (_float_list, None),
    "delta": (_float, 2.0 ** -6),
    "cutoff": (_word(CUTOFF_SHAPES), "smooth_polynomial"),
    "model.name": (_string, None),
    "model.beta": (_float, None),
    "bands.slope_tolerance": (_float, 0.1),
    "bands.slope": (_band_list, None),
    "bands.r2_min": (_float, 0.9),
    "bands.max_excluded_fraction": (_float, 0.001),
    "bands.ratio_factor": (_float, 2.0),
    "kolmogorov.source": (_word(tuple(SOURCES)), "sin"),
    "kolmogorov.drift": (_float, 0.0),
    "kolmogorov.sigma": (_float, 1.0),
    "kolmogorov.L": (_float, 10.5 * math.pi),
    "kolmogorov.n_x": (_int, 1201),
    "kolmogorov.n_t": (_int, 200),
    "kolmogorov.t1": (_float, 1.0),
    "kolmogorov.lengths": (_float_list, [0.4, 0.2, 0.1, 0.05]),
    "modulus.cutoffs": (_float_list, None),
    "modulus.quad_tol": (_float, 1e-8),
    "modulus.expect": (_word(VERDICTS), None),
}

# keys that do not change results and so stay out of the digest
_NOT_DIGESTED = {"out"}


def _dynamic_converter(key):
    if re.fullmatch(r"model\.params\.[A-Za-z_]\w*", key):
        return _float
    if re.fullmatch(r"kolmogorov\.source_params\.[A-Za-z_]\w*", key):
        return _float
    m = _MODULUS_KEY.fullmatch(key)
    if m:
        leaf = m.group(3)
        if leaf == "kind":
            return _word(KINDS)
        if leaf == "params.points":
            return _points
        return _float
    return None


def converter_for(key):
    if key in SCHEMA:
        return SCHEMA[key][0]
    return _dynamic_converter(key)


@dataclass
class Bands:
    slope_tolerance: float = 0.1
    slope: dict = field(default_factory=dict)
    r2_min: float = 0.9
    max_excluded_fraction: float = 0.001
    ratio_factor: float = 2.0

    def slope_window(self, p):
        if p in self.slope:
            return self.slope[p]
        return (p / 2 - self.slope_tolerance, p / 2 + self.slope_tolerance)


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict  # fully typed flat key -> value, defaults included
    source: str = ""

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def T(self):
        return self.values["T"]

    @property
    def x0(self):
        return self.values["x0"]

    @property
    def delta_list(self):
        return self.values["delta_list"]

    @property
    def ref_factor(self):
        return self.values["ref_factor"]

    @property
    def p_list(self):
        return self.values["p_list"]

    @property
    def replicas(self):
        return self.values["replicas"]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def out(self):
        return self.values["out"]

    @property
    def k_list(self):
        return self.values.get("k_list")

    @property
    def bands(self) -> Bands:
        v = self.values
        return Bands(
            v["bands.slope_tolerance"],
            dict(v.get("bands.slope") or {}),
            v["bands.r2_min"],
            v["bands.max_excluded_fraction"],
            v["bands.ratio_factor"],
        )

    def block(self, prefix) -> dict:
        """Nested dict of every key under ``prefix.``."""
        out = {}
        cut = len(prefix) + 1
        for key, val in self.values.items():
            if key.startswith(prefix + "."):
                node = out
                parts = key[cut:].split(".")
                for part in parts[:-1]:
                    node = node.setdefault(part, {})
                node[parts[-1]] = val
        return out

    def model_params(self) -> dict:
        return self.block("model.params")

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(overrides)
        return ExperimentConfig(self.experiment, vals, self.source)

    def canonical_lines(self, include_all=True):
        lines = []
        for key in sorted(self.values):
            if not include_all and key in _NOT_DIGESTED:
                continue
            lines.append(f"{key} = {format_value(self.values[key])}")
        return lines

    def digest(self) -> str:
        text = "\n".join(self.canonical_lines(include_all=False)) + "\n"
        return hashlib.sha256(text.encode()).hexdigest()


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _fmt_float(v)
    if isinstance(v, dict):
        return ", ".join(f"{_fmt_float(p)}:{_fmt_float(lo)}:{_fmt_float(hi)}" for p, (lo, hi) in sorted(v.items()))
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            return ", ".join(f"{_fmt_float(a)}:{_fmt_float(b)}" for a, b in v)
        return ", ".join(_fmt_float(x) for x in v)
    return str(v)


def _fmt_float(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def parse_text(text: str, source: str = "<string>") -> ExperimentConfig:
    problems = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not _KEY.match(key):
            problems.append(f"{source}:{lineno}: malformed key {key!r}")
            continue
        if key.startswith("run."):
            continue
        if key in raw:
            problems.append(f"{source}:{lineno}: duplicate key {key!r} (first on line {raw[key][1]})")
            continue
        raw[key] = (value, lineno)

    values = {}
    failed = set()
    for key, (text_value, lineno) in raw.items():
        conv = converter_for(key)
        if conv is None:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = conv(text_value)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            problems.append(f"{source}:{lineno}: {key}: {exc}")
            failed.add(key)

    # defaults also stand in for values that failed to convert, so the
    # remaining checks still run without repeating the same complaint
    for key, (_, default) in SCHEMA.items():
        if key not in values and default is not None:
            values[key] = list(default) if isinstance(default, list) else default

    line_of = {k: ln for k, (_, ln) in raw.items()}
    problems.extend(_validate(values, line_of, source, failed))
    if problems:
        raise ConfigErrors(problems)
    return ExperimentConfig(values["experiment"], values, source)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigErrors([f"{path}: cannot read ({exc.strerror})"]) from None
    return parse_text(text, str(path))


def _validate(v, line_of, source, failed=frozenset()):
    out = []

    def bad(key, msg):
        where = f"{source}:{line_of[key]}" if key in line_of else source
        out.append(f"{where}: {key}: {msg}")

    exp = v.get("experiment")
    if exp is None:
        if "experiment" not in failed:
            out.append(f"{source}: missing required key 'experiment'")
        return out
    T = v["T"]
    if not (T > 0 and math.isfinite(T)):
        bad("T", "horizon must be positive and finite")
    if v["replicas"] < 2:
        bad("replicas", "need at least 2 replicas")
    if v["seed"] < 0:
        bad("seed", "seed must be nonnegative")
    elif v["seed"] >= 2 ** 64:
        bad("seed", "seed must fit in 64 bits")
    if v["ref_factor"] < 1:
        bad("ref_factor", "must be a positive integer")
    if v["chunk_size"] < 1:
        bad("chunk_size", "must be a positive integer")
    for p in v["p_list"]:
        if not 1 <= p <= 8:
            bad("p_list", f"moment order {p} outside [1, 8]")
    if T > 0 and math.isfinite(T):
        if not v["delta_list"]:
            bad("delta_list", "needs at least one step")
        for d in v["delta_list"]:
            if not _is_dyadic(T, d):
                bad("delta_list", f"step must divide fine grid: {d} is not T/2^j")
        if exp == "truncation" and not _is_dyadic(T, v["delta"]):
            bad("delta", f"step must divide fine grid: {v['delta']} is not T/2^j")

    bands = v.get("bands.slope") or {}
    for p, (lo, hi) in bands.items():
        if not lo <= hi:
            bad("bands.slope", f"band for p={p} is not ordered: {lo} > {hi}")
    if v["bands.slope_tolerance"] < 0:
        bad("bands.slope_tolerance", "must be nonnegative")
    if not 0 <= v["bands.r2_min"] <= 1:
        bad("bands.r2_min", "must lie in [0, 1]")
    if not 0 <= v["bands.max_excluded_fraction"] <= 1:
        bad("bands.max_excluded_fraction", "must lie in [0, 1]")
    if v["bands.ratio_factor"] < 1:
        bad("bands.ratio_factor", "must be >= 1")

    if exp in ("rates", "one_step", "truncation"):
        name = v.get("model.name")
        if name is None:
            if "model.name" not in failed:
                bad("model.name", "required for this experiment")
        elif name not in ZOO:
            bad("model.name", f"unknown model {name!r}; registry: {', '.join(sorted(ZOO))}")
        beta = v.get("model.beta")
        if beta is not None and not 0 < beta < 1:
            bad("model.beta", "must lie in the open interval (0, 1)")
    if exp == "truncation":
        ks = v.get("k_list")
        if not ks:
            if "k_list" not in failed:
                bad("k_list", "required for truncation experiments")
        elif any(k < 1 for k in ks):
            bad("k_list", "truncation radii must be >= 1")
    if exp == "kolmogorov":
        if v["kolmogorov.n_x"] < 3:
            bad("kolmogorov.n_x", "need at least 3 nodes")
        if v["kolmogorov.n_t"] < 1:
            bad("kolmogorov.n_t", "need at least 1 step")
        if v["kolmogorov.L"] < 10:
            bad("kolmogorov.L", "domain half-width must be >= 10")
        ls = v["kolmogorov.lengths"]
        if any(x <= 0 for x in ls) or any(b >= a for a, b in zip(ls, ls[1:])):
            bad("kolmogorov.lengths", "must be positive and strictly decreasing")
        elif ls and ls[0] > v["kolmogorov.t1"]:
            bad("kolmogorov.lengths", "longest interval exceeds t1")
    if exp == "check_modulus" and "modulus.kind" not in v and "modulus.kind" not in failed:
        bad("modulus.kind", "required for check_modulus")
    return out


def _is_dyadic(T, delta):
    if not delta > 0:
        return False
    q = T / delta
    n = round(q)
    return n >= 1 and abs(q - n) <= 1e-9 * q and (n & (n - 1)) == 0
