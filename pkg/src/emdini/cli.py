"""Command-line front end: ``emdini run|plot|models|check-modulus|kolmogorov``.

Exit status of ``run``: 0 when every acceptance band passes, 1 when any band
fails, 2 on configuration or execution errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, format_value, parse_config, parse_number
from .errors import ConfigurationError, EmdiniError
from .experiment import (
    ConvergenceReport,
    one_step_gap,
    strong_error,
    truncation_csv,
    truncation_experiment,
)
from .kolmogorov import PdeProblem, gradient_scaling_check, source_by_name
from .model import ZOO, CutoffSpec, zoo
from .modulus import DEFAULT_CUTOFFS, check_dini_integral, modulus_from_dict
from .plotting import plot_error_table, plot_scaling, plot_truncation

log = logging.getLogger("emdini")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class Check:
    """One acceptance band outcome."""

    def __init__(self, name, ok, detail):
        self.name, self.ok, self.detail = name, bool(ok), detail

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


class Outputs:
    """Collects files as ``name.partial`` and renames them once all succeed."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.pending = []

    def path(self, name):
        final = self.dir / name
        tmp = self.dir / (name + ".partial")
        self.pending.append((tmp, final))
        return tmp

    def text(self, name, content):
        self.path(name).write_text(content)

    def commit(self):
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending = []


class DirectoryLock:
    def __init__(self, directory: Path):
        self.file = directory / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.file, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigurationError(
                f"{self.file} exists: another run is using this directory (delete the file if it is stale)"
            ) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.unlink(self.file)
        return False


# ---------------------------------------------------------------------------
# building objects from a config


def build_model(cfg: ExperimentConfig):
    model = zoo(cfg["model.name"], **cfg.model_params())
    changes = {}
    if cfg.get("model.beta") is not None:
        changes["holder_beta"] = cfg["model.beta"]
    for key in ("spatial_modulus", "time_modulus"):
        block = cfg.block(f"model.{key}")
        if block:
            changes[key] = modulus_from_dict(block)
    return dataclasses.replace(model, **changes) if changes else model


def _x0(cfg, d):
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.size == 1 and d > 1:
        x0 = np.full(d, x0[0])
    if x0.size != d:
        raise ConfigurationError(f"x0 has {x0.size} entries but the model has dimension {d}")
    return x0


def _band_checks(table, cfg, label="slope"):
    bands = cfg.bands
    checks = []
    for row in table.rows:
        frac = row.excluded / (row.n_effective + row.excluded)
        if frac > bands.max_excluded_fraction:
            checks.append(Check(f"excluded delta={row.delta:g} p={row.p:g}", False,
                                f"{frac:.4g} > {bands.max_excluded_fraction:g}"))
    report = ConvergenceReport.build(table, cfg.seed)
    for p, fit in report.fits.items():
        lo, hi = bands.slope_window(p)
        if fit is None:
            checks.append(Check(f"{label} p={p:g}", False, "fewer than 3 usable points, no fit"))
            continue
        checks.append(Check(f"{label} p={p:g}", lo <= fit.slope <= hi, f"{fit.slope:.4f} in [{lo:g}, {hi:g}]"))
        checks.append(Check(f"r2 p={p:g}", fit.r_squared >= bands.r2_min,
                            f"{fit.r_squared:.4f} >= {bands.r2_min:g}"))
    return report, checks


def run_rates(cfg, out: Outputs, workers, dump_paths):
    model = build_model(cfg)
    dump_dir = out.dir / "paths" if dump_paths else None
    table = strong_error(
        model, _x0(cfg, model.dimension), cfg.delta_list, cfg.ref_factor, cfg.p_list, cfg.replicas,
        cfg.seed, cfg.T, workers, cfg["chunk_size"], cfg["monitor"], dump_dir,
    )
    report, checks = _band_checks(table, cfg)
    out.text("errors.csv", table.to_csv())
    out.text("fits.txt", report.fits_text())
    plot_error_table(table, out.path("errors.svg"), title=f"{model.name} strong error")
    return checks


def run_one_step(cfg, out: Outputs, workers, dump_paths):
    model = build_model(cfg)
    rows, phi_rows = [], []
    for p in cfg.p_list:
        res = one_step_gap(model, cfg.delta_list, p, cfg.replicas, cfg.seed, cfg.T,
                           _x0(cfg, model.dimension), workers, cfg["chunk_size"])
        rows += res.gap.rows
        phi_rows += res.modulus_gap.rows
    table = type(res.gap)(rows)
    phi_table = type(res.gap)(phi_rows)
    report, checks = _band_checks(table, cfg, label="gap slope")
    out.text("gap.csv", table.to_csv())
    out.text("modulus_gap.csv", phi_table.to_csv())
    out.text("fits.txt", report.fits_text())
    plot_error_table(table, out.path("gap.svg"), title=f"{model.name} one-step gap")
    return checks


def run_truncation(cfg, out: Outputs, workers, dump_paths):
    model = build_model(cfg)
    ks = sorted(cfg.k_list)
    p = cfg.p_list[0]
    rows = truncation_experiment(model, ks, cfg["delta"], p, cfg.replicas, cfg.seed,
                                 CutoffSpec(cfg["cutoff"]), cfg.T, _x0(cfg, model.dimension),
                                 workers, cfg["chunk_size"])
    text = truncation_csv(rows)
    out.text("truncation.csv", text)
    plot_truncation(text, out.path("truncation.svg"))
    diffs = [r.mean_diff for r in rows]
    checks = [Check("mean difference nonincreasing in k", all(b <= a for a, b in zip(diffs, diffs[1:])),
                    ", ".join(f"{d:.4g}" for d in diffs))]
    frac = max(r.excluded / (r.n_effective + r.excluded) for r in rows)
    checks.append(Check("excluded fraction", frac <= cfg.bands.max_excluded_fraction,
                        f"{frac:.4g} <= {cfg.bands.max_excluded_fraction:g}"))
    return checks


def kolmogorov_problem(cfg):
    src = source_by_name(cfg["kolmogorov.source"], **cfg.block("kolmogorov.source_params"))
    b, s = cfg["kolmogorov.drift"], cfg["kolmogorov.sigma"]
    t1 = cfg["kolmogorov.t1"]
    return PdeProblem(
        t0=t1 - cfg["kolmogorov.lengths"][0], t1=t1, L=cfg["kolmogorov.L"], n_x=cfg["kolmogorov.n_x"],
        drift=_ConstCoef(b), diffusion=_ConstCoef(s), source=src,
    )


@dataclasses.dataclass(frozen=True)
class _ConstCoef:
    value: float

    def __call__(self, t, x):
        return np.full_like(x, self.value, dtype=float)


def run_kolmogorov(cfg, out: Outputs, workers, dump_paths):
    problem = kolmogorov_problem(cfg)
    res = gradient_scaling_check(problem, cfg["kolmogorov.lengths"], cfg["kolmogorov.n_t"],
                                 cfg.bands.ratio_factor)
    text = res.to_csv()
    out.text("scaling.csv", text)
    plot_scaling(text, out.path("scaling.svg"))
    return [Check("sup_grad / sqrt(length) spread", res.passed, f"{res.spread:.4f} <= {res.factor:g}")]


def run_check_modulus(cfg, out: Outputs, workers, dump_paths):
    spec = modulus_from_dict(cfg.block("modulus"))
    cutoffs = cfg.get("modulus.cutoffs") or DEFAULT_CUTOFFS
    verdict = check_dini_integral(spec, cutoffs=cutoffs, quad_tol=cfg["modulus.quad_tol"])
    lines = [
        f"status = {verdict.status}",
        f"integral_estimate = {format_value(verdict.integral_estimate)}",
        f"tail_growth_exponent = {format_value(verdict.tail_growth_exponent)}",
        f"partials = {format_value(list(verdict.partials))}",
    ]
    out.text("modulus.txt", "\n".join(lines) + "\n")
    expect = cfg.get("modulus.expect")
    if expect is None:
        return []
    return [Check("dini verdict", verdict.status == expect, f"{verdict.status} (expected {expect})")]


RUNNERS = {
    "rates": run_rates,
    "one_step": run_one_step,
    "truncation": run_truncation,
    "kolmogorov": run_kolmogorov,
    "check_modulus": run_check_modulus,
}


def manifest_text(cfg: ExperimentConfig, workers, wall, status, checks) -> str:
    lines = ["# emdini run manifest; parse it as a config to repeat the run"]
    lines += cfg.canonical_lines()
    lines += [
        f"run.digest = {cfg.digest()}",
        f"run.version = {__version__}",
        f"run.numpy = {np.__version__}",
        f"run.workers = {workers}",
        f"run.wall_time = {wall:.3f}",
        f"run.status = {status}",
    ]
    lines += [f"run.check_{i} = {c.line()}" for i, c in enumerate(checks)]
    return "\n".join(lines) + "\n"


def run(cfg: ExperimentConfig, workers: int = 1, dump_paths: bool = False, stream=None) -> int:
    """Execute a validated config; returns the exit status."""
    stream = stream or sys.stdout
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with DirectoryLock(out_dir):
        out = Outputs(out_dir)
        start = time.perf_counter()
        log.info("running %s (digest %s) with %d worker(s)", cfg.experiment, cfg.digest()[:12], workers)
        checks = RUNNERS[cfg.experiment](cfg, out, workers, dump_paths)
        wall = time.perf_counter() - start
        status = EXIT_PASS if all(c.ok for c in checks) else EXIT_FAIL
        out.text("run.manifest", manifest_text(cfg, workers, wall, status, checks))
        out.commit()
    for c in checks:
        print(c.line(), file=stream)
    print(f"wrote {out_dir} in {wall:.1f}s", file=stream)
    return status


# ---------------------------------------------------------------------------
# argument handling


def _kv_pairs(items):
    params = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"parameter {item!r} must look like name=value")
        k, v = item.split("=", 1)
        if k == "points":
            params[k] = [tuple(parse_number(x) for x in pt.split(":")) for pt in v.split(",")]
        else:
            params[k] = parse_number(v)
    return params


def cmd_run(args):
    cfg = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("--seed must be nonnegative")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    return run(cfg, args.workers, args.dump_paths)


def cmd_plot(args):
    from .plotting import emit_plot, slope_label

    slopes = emit_plot(args.input, args.out)
    for p, s in slopes.items():
        print(f"p = {p:g}: slope {slope_label(s)}")
    return EXIT_PASS


def cmd_models(args):
    for name in sorted(ZOO):
        e = ZOO[name]
        params = ", ".join(f"{k}={v}" for k, v in e.defaults.items())
        print(f"{name:15s} [{e.regime}] regularity: {e.regularity}; params: {params}")
        print(f"{'':15s} {e.description}")
    return EXIT_PASS


def cmd_check_modulus(args):
    block = {"kind": args.kind, "params": _kv_pairs(args.params)}
    if args.domain_cap is not None:
        block["domain_cap"] = args.domain_cap
    if args.inner:
        block["inner"] = {"kind": args.inner, "params": _kv_pairs(args.inner_params)}
    spec = modulus_from_dict(block)
    v = check_dini_integral(spec)
    print(f"status: {v.status}")
    print(f"integral estimate: {v.integral_estimate!r}")
    print(f"tail growth exponent: {v.tail_growth_exponent!r}")
    return EXIT_PASS


def cmd_kolmogorov(args):
    lengths = [parse_number(x) for x in args.lengths.split(",")]
    params = _kv_pairs(args.source_params)
    t1 = max(lengths)
    problem = PdeProblem(0.0, t1, args.L, args.n_x, _ConstCoef(args.drift), _ConstCoef(args.sigma),
                         source_by_name(args.source, **params))
    res = gradient_scaling_check(problem, lengths, args.n_t, args.factor)
    sys.stdout.write(res.to_csv())
    print(f"spread {res.spread:.4f} (limit {res.factor:g}), monotone: {res.monotone}")
    return EXIT_PASS if res.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emdini", description="Euler-Maruyama strong-rate experiments")
    ap.add_argument("--version", action="version", version=f"emdini {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.add_argument("--dump-paths", action="store_true", help="write per-replica paths for the finest step")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", help="draw an error CSV as SVG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    m = sub.add_parser("models", help="list the model registry")
    m.set_defaults(func=cmd_models)

    c = sub.add_parser("check-modulus", help="classify a modulus as Dini or not")
    c.add_argument("--kind", required=True)
    c.add_argument("--params", nargs="*", default=[], metavar="NAME=VALUE")
    c.add_argument("--domain-cap", type=float)
    c.add_argument("--inner", help="inner modulus kind for product moduli")
    c.add_argument("--inner-params", nargs="*", default=[], metavar="NAME=VALUE")
    c.set_defaults(func=cmd_check_modulus)

    k = sub.add_parser("kolmogorov", help="gradient scaling ladder for the backward equation")
    k.add_argument("--source", default="sin")
    k.add_argument("--source-params", nargs="*", default=[], metavar="NAME=VALUE")
    k.add_argument("--lengths", default="0.4,0.2,0.1,0.05")
    k.add_argument("--drift", type=float, default=0.0)
    k.add_argument("--sigma", type=float, default=1.0)
    k.add_argument("--L", type=float, default=10.5 * math.pi)
    k.add_argument("--n-x", type=int, default=1201)
    k.add_argument("--n-t", type=int, default=200)
    k.add_argument("--factor", type=float, default=2.0)
    k.set_defaults(func=cmd_kolmogorov)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EmdiniError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
