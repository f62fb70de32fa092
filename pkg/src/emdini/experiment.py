"""Monte Carlo experiments on coupled Brownian paths.

Replicas are split into fixed-size chunks by replica id.  Chunk boundaries
never depend on the worker count, and per-replica results are reduced in
replica-id order, so every table is a pure function of its inputs and the
master seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError, ExperimentFailure, InsufficientDataError
from .model import CutoffSpec, SdeModel, truncate_model
from .modulus import eval_modulus
from .path import block_sum, cumulative, draw_batch
from .scheme import Trajectory, em_interpolant_paths, em_paths, sup_norm_paths

DEFAULT_CHUNK = 512
CSV_HEADER = ("delta", "p", "n_effective", "excluded", "mean_error", "std_error")


def fmt(x) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(x))


class ErrorRow(NamedTuple):
    delta: float
    p: float
    n_effective: int
    excluded: int
    mean_error: float
    std_error: float


@dataclass
class ErrorTable:
    rows: list[ErrorRow] = field(default_factory=list)

    def __post_init__(self):
        keys = [(r.delta, r.p) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ConfigurationError("error table rows must be unique in (delta, p)")

    def for_p(self, p) -> list[ErrorRow]:
        return sorted((r for r in self.rows if r.p == p), key=lambda r: r.delta)

    @property
    def p_values(self):
        return sorted({r.p for r in self.rows})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([fmt(r.delta), fmt(r.p), r.n_effective, r.excluded, fmt(r.mean_error), fmt(r.std_error)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ErrorTable":
        return cls(read_error_rows(text))


def read_error_rows(text: str) -> list[ErrorRow]:
    """Parse CSV text with the error-table header, reporting the bad row number."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigurationError("row 1: empty CSV, expected header") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ConfigurationError(f"row 1: header {header} != {list(CSV_HEADER)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise ConfigurationError(f"row {lineno}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
        try:
            row = ErrorRow(float(rec[0]), float(rec[1]), int(rec[2]), int(rec[3]), float(rec[4]), float(rec[5]))
        except ValueError as exc:
            raise ConfigurationError(f"row {lineno}: {exc}") from None
        if row.mean_error < 0 or row.delta <= 0:
            raise ConfigurationError(f"row {lineno}: delta must be positive and mean_error nonnegative")
        rows.append(row)
    return rows


class RateFit(NamedTuple):
    p: float
    slope: float
    intercept: float
    r_squared: float
    ci_low: float
    ci_high: float
    n_points: int

    @property
    def expected_slope(self):
        return self.p / 2

    @property
    def constant(self):
        return math.exp(self.intercept)

    def as_dict(self):
        return {
            "p": self.p,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r_squared,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "expected_slope": self.expected_slope,
        }


def fit_loglog(x, y, p=math.nan) -> RateFit:
    """OLS of log y on log x with a 95% t-interval for the slope."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 3:
        raise InsufficientDataError(f"need >= 3 positive points for a rate fit, got {int(keep.sum())}")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    n = lx.size
    mx, my = lx.mean(), ly.mean()
    sxx = np.sum((lx - mx) ** 2)
    slope = np.sum((lx - mx) * (ly - my)) / sxx
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    se = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else math.inf
    half = stats.t.ppf(0.975, n - 2) * se
    return RateFit(float(p), float(slope), float(intercept), r2, float(slope - half), float(slope + half), n)


def fit_rate(table: ErrorTable, p: float) -> RateFit:
    rows = [r for r in table.for_p(p) if r.mean_error > 0]
    if len(rows) < 3:
        raise InsufficientDataError(f"p={p}: need >= 3 rows with positive mean_error, got {len(rows)}")
    return fit_loglog([r.delta for r in rows], [r.mean_error for r in rows], p)


@dataclass
class ConvergenceReport:
    table: ErrorTable
    fits: dict
    seed: int
    config_digest: str = ""

    @classmethod
    def build(cls, table: ErrorTable, seed: int, config_digest: str = "") -> "ConvergenceReport":
        fits = {}
        for p in table.p_values:
            try:
                fits[p] = fit_rate(table, p)
            except InsufficientDataError:
                fits[p] = None
        return cls(table, fits, seed, config_digest)

    def fits_text(self) -> str:
        lines = [json.dumps(f.as_dict()) for f in self.fits.values() if f is not None]
        return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# chunked execution


def chunk_ids(replicas: int, chunk_size: int):
    return [range(a, min(a + chunk_size, replicas)) for a in range(0, replicas, chunk_size)]


def map_chunks(func, arglist, workers: int = 1):
    """Apply ``func`` to each argument tuple, preserving order."""
    if workers <= 1 or len(arglist) <= 1:
        return [func(*a) for a in arglist]
    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork")) as pool:
        return list(pool.map(func, *zip(*arglist)))


def _steps(T, delta):
    q = T / delta
    n = int(round(q))
    if n < 1 or abs(q - n) > 1e-9 * q:
        raise ConfigurationError(f"step {delta} does not divide the horizon T={T}")
    return n


def _grid_factors(T, deltas, ref_factor):
    counts = [_steps(T, dl) for dl in deltas]
    n_fine = max(counts) * ref_factor
    for dl, n in zip(deltas, counts):
        if n_fine % n:
            raise ConfigurationError(f"step must divide fine grid: delta={dl} vs fine step {T / n_fine}")
    return counts, n_fine


def _reduce(values: np.ndarray, excluded: np.ndarray):
    good = values[~excluded]
    n = good.size
    if n == 0:
        return 0, math.nan, math.nan
    mean = float(np.sum(good) / n)
    se = float(np.std(good, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return n, mean, se


def _table(deltas, p_list, sups, excluded, replicas):
    rows = []
    for i, dl in enumerate(deltas):
        if excluded[:, i].all():
            raise ExperimentFailure(f"all {replicas} replicas excluded at delta={dl}")
        for p in p_list:
            n, mean, se = _reduce(sups[:, i] ** p, excluded[:, i])
            rows.append(ErrorRow(float(dl), float(p), n, replicas - n, mean, se))
    return ErrorTable(rows)


def _write_path(path, times, states):
    d = states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
        for t, row in zip(times, states):
            w.writerow([fmt(t)] + [fmt(v) for v in row])


def _strong_error_chunk(model, x0, T, n_fine, counts, ref_factor, seed, ids, monitor, dump_dir):
    d = model.dimension
    root = draw_batch(d, T, n_fine, seed, ids)
    dt_fine = T / n_fine
    n_min = max(counts)
    base = n_fine // n_min  # fine steps per finest coarse step
    record = 1 if monitor == "fine" else base
    if model.exact is not None:
        w = cumulative(root)[:, ::record]
        times = np.arange(0, n_fine + 1, record) * dt_fine
        ref = model.exact(times, w, np.asarray(x0, dtype=float))
        ref_bad = ~np.all(np.isfinite(ref), axis=(1, 2))
    else:
        ref, ref_bad, _ = em_paths(model, root, dt_fine, x0, record_every=record)

    sups = np.empty((len(ids), len(counts)))
    bad = np.empty((len(ids), len(counts)), dtype=bool)
    for i, n in enumerate(counts):
        f = n_fine // n
        coarse = block_sum(root, f)
        y, blown, _ = em_paths(model, coarse, T / n, x0)
        if monitor == "fine":
            y = em_interpolant_paths(model, y, root, f, T / n)
            target = ref
        else:
            target = ref[:, :: f // base]
        sups[:, i] = sup_norm_paths(target - y)
        bad[:, i] = blown | ref_bad
        if dump_dir is not None and n == n_min:
            times = np.arange(n + 1) * (T / n)
            for row, rid in enumerate(ids):
                _write_path(os.path.join(dump_dir, f"replica_{rid:06d}.csv"), times, y[row])
    return sups, bad


def strong_error(
    model: SdeModel,
    x0,
    deltas: Sequence[float],
    ref_factor: int = 64,
    p_list: Sequence[float] = (1.0,),
    replicas: int = 1000,
    master_seed: int = 0,
    T: float = 1.0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    monitor: str = "coarse",
    dump_dir=None,
) -> ErrorTable:
    """Estimate E[sup_t |X_t - Y_t|^p] for every step in ``deltas``.

    Each replica draws one fine path with step min(deltas) / ref_factor.  The
    reference X is the model's exact solution on that path when available,
    otherwise EM on the fine grid.  Y is EM on the coarsened path.  With
    ``monitor="coarse"`` the sup runs over the coarse grid points of each
    step; ``monitor="fine"`` compares the continuous-time EM interpolant with
    the reference at every fine point.
    """
    if replicas < 2:
        raise ConfigurationError("replicas must be >= 2")
    if ref_factor < 1 or int(ref_factor) != ref_factor:
        raise ConfigurationError("ref_factor must be a positive integer")
    if monitor not in ("coarse", "fine"):
        raise ConfigurationError(f"monitor must be 'coarse' or 'fine', got {monitor!r}")
    if any(p < 1 for p in p_list):
        raise ConfigurationError("moment orders must be >= 1")
    counts, n_fine = _grid_factors(T, deltas, int(ref_factor))
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
    args = [
        (model, x0, T, n_fine, counts, int(ref_factor), master_seed, ids, monitor, dump_dir)
        for ids in chunk_ids(replicas, chunk_size)
    ]
    parts = map_chunks(_strong_error_chunk, args, workers)
    sups = np.concatenate([s for s, _ in parts])
    bad = np.concatenate([b for _, b in parts])
    return _table(list(deltas), list(p_list), sups, bad, replicas)


# ---------------------------------------------------------------------------
# one-step gap


class GapResult(NamedTuple):
    gap: ErrorTable  # E|Y_t - Y_eta|^p
    modulus_gap: ErrorTable  # E[phi(|Y_t - Y_eta|)^p]


def _gap_chunk(model, x0, T, n_fine, counts, seed, ids):
    d = model.dimension
    root = draw_batch(d, T, n_fine, seed, ids)
    gaps = np.empty((len(ids), len(counts)))
    bad = np.zeros((len(ids), len(counts)), dtype=bool)
    for i, n in enumerate(counts):
        f = n_fine // n
        half = f // 2
        j = n // 2
        if j:
            coarse = block_sum(root[:, : j * f], f)
            y, blown, _ = em_paths(model, coarse, T / n, x0)
            y_eta = y[:, -1]
        else:
            y_eta = np.broadcast_to(np.asarray(x0, dtype=float), (len(ids), d)).copy()
            blown = np.zeros(len(ids), dtype=bool)
        t_eta = j * (T / n)
        dw = block_sum(root[:, j * f : j * f + half], half)[:, 0]
        b = model.drift(t_eta, y_eta)
        sig = model.diffusion(t_eta, y_eta)
        g = b * (half * (T / n_fine)) + (sig @ dw[..., None])[..., 0]
        gaps[:, i] = np.sqrt(np.sum(g * g, axis=-1))
        bad[:, i] = blown | ~np.isfinite(gaps[:, i])
    return gaps, bad


def one_step_gap(
    model: SdeModel,
    deltas: Sequence[float],
    p: float = 2.0,
    replicas: int = 1000,
    master_seed: int = 0,
    T: float = 1.0,
    x0=0.0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> GapResult:
    """Moments of the EM gap Y_t - Y_eta at the cell midpoint t = eta + delta/2.

    eta is the grid point floor(N/2) * delta.  All steps share one fine path
    of step min(deltas)/2 per replica.  Both E|gap|^p and E[phi(|gap|)^p],
    with phi the model's spatial modulus, are reported.
    """
    if model.drift_bound is None or model.diffusion_bound is None:
        raise ConfigurationError(f"model {model.name} lacks bounded-coefficient metadata")
    if replicas < 2:
        raise ConfigurationError("replicas must be >= 2")
    counts, n_fine = _grid_factors(T, deltas, 2)
    args = [(model, x0, T, n_fine, counts, master_seed, ids) for ids in chunk_ids(replicas, chunk_size)]
    parts = map_chunks(_gap_chunk, args, workers)
    gaps = np.concatenate([g for g, _ in parts])
    bad = np.concatenate([b for _, b in parts])
    phi = eval_modulus(model.spatial_modulus, np.where(bad, 0.0, gaps))
    return GapResult(
        _table(list(deltas), [p], gaps, bad, replicas),
        _table(list(deltas), [p], phi, bad, replicas),
    )


# ---------------------------------------------------------------------------
# truncation


class TruncationRow(NamedTuple):
    k: float
    p: float
    n_effective: int
    excluded: int
    mean_diff: float
    std_error: float
    exit_fraction: float
    sup_moment: float


TRUNCATION_HEADER = ("k", "p", "n_effective", "excluded", "mean_diff", "std_error", "exit_fraction", "sup_moment")


def truncation_csv(rows: Sequence[TruncationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUNCATION_HEADER)
    for r in rows:
        w.writerow([fmt(r.k), fmt(r.p), r.n_effective, r.excluded, fmt(r.mean_diff), fmt(r.std_error),
                    fmt(r.exit_fraction), fmt(r.sup_moment)])
    return buf.getvalue()


def _truncation_chunk(model, x0, T, n, k_list, cutoff, seed, ids):
    root = draw_batch(model.dimension, T, n, seed, ids)
    y, blown, _ = em_paths(model, root, T / n, x0)
    radius = sup_norm_paths(y)
    diffs = np.empty((len(ids), len(k_list)))
    ksup = np.empty_like(diffs)
    bad = np.empty(diffs.shape, dtype=bool)
    for i, k in enumerate(k_list):
        yk, blown_k, _ = em_paths(truncate_model(model, k, cutoff), root, T / n, x0)
        diffs[:, i] = sup_norm_paths(y - yk)
        ksup[:, i] = sup_norm_paths(yk)
        bad[:, i] = blown | blown_k
    return diffs, ksup, radius, bad


def truncation_experiment(
    model: SdeModel,
    k_list: Sequence[float],
    delta: float,
    p: float = 1.0,
    replicas: int = 1000,
    master_seed: int = 0,
    cutoff: CutoffSpec | None = None,
    T: float = 1.0,
    x0=1.0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[TruncationRow]:
    """Compare EM for ``model`` and its truncations on shared paths.

    For each radius k: the p-th moment of sup_t |Y_t - Y^(k)_t|, the fraction
    of paths with sup_t |Y_t| >= k, and E sup_t |Y^(k)_t|^p.
    """
    if model.linear_growth_const is None:
        raise ConfigurationError(f"model {model.name} lacks linear-growth metadata")
    if replicas < 2:
        raise ConfigurationError("replicas must be >= 2")
    cutoff = cutoff or CutoffSpec()
    n = _steps(T, delta)
    ks = [float(k) for k in k_list]
    args = [(model, x0, T, n, ks, cutoff, master_seed, ids) for ids in chunk_ids(replicas, chunk_size)]
    parts = map_chunks(_truncation_chunk, args, workers)
    diffs = np.concatenate([q[0] for q in parts])
    ksup = np.concatenate([q[1] for q in parts])
    radius = np.concatenate([q[2] for q in parts])
    bad = np.concatenate([q[3] for q in parts])
    rows = []
    for i, k in enumerate(ks):
        if bad[:, i].all():
            raise ExperimentFailure(f"all replicas excluded at k={k}")
        n_eff, mean, se = _reduce(diffs[:, i] ** p, bad[:, i])
        keep = ~bad[:, i]
        exit_fraction = float(np.sum(radius[keep] >= k) / n_eff)
        moment = float(np.sum(ksup[keep, i] ** p) / n_eff)
        rows.append(TruncationRow(k, float(p), n_eff, replicas - n_eff, mean, se, exit_fraction, moment))
    return rows


# ---------------------------------------------------------------------------
# moments


class MomentEstimate(NamedTuple):
    mean: float
    std_error: float
    n: int


def moment_bound_check(trajectories, p: float) -> MomentEstimate:
    """Monte Carlo mean of sup_t |X_t|^p over a set of paths."""
    if isinstance(trajectories, np.ndarray):
        states = trajectories
        if states.ndim == 2:
            states = states[None]
    else:
        trajs = list(trajectories)
        if not trajs:
            raise ConfigurationError("moment_bound_check needs at least one trajectory")
        states = [t.states if isinstance(t, Trajectory) else np.asarray(t) for t in trajs]
        if len({s.shape for s in states}) == 1:
            states = np.stack(states)
        else:
            sups = np.array([sup_norm_paths(s[None])[0] for s in states]) ** p
            return _moment(sups)
    if states.shape[0] == 0:
        raise ConfigurationError("moment_bound_check needs at least one trajectory")
    return _moment(sup_norm_paths(states) ** p)


def _moment(vals):
    n = vals.size
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return MomentEstimate(float(np.sum(vals) / n), se, n)
