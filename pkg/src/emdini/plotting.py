"""Figures for result tables, written as self-contained SVG."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigurationError, InsufficientDataError  # noqa: E402
from .experiment import ErrorTable, fit_rate  # noqa: E402

# keep text as text so the SVG stays small and greppable
plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "emdini"


def _save(fig, out):
    out = Path(out)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def plot_error_table(table: ErrorTable, out, title: str = "") -> dict:
    """Log-log error plot; returns the fitted slope per p (None when unfitted)."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    slopes = {}
    for i, p in enumerate(table.p_values):
        rows = [r for r in table.for_p(p) if r.mean_error > 0]
        color = f"C{i}"
        d = np.array([r.delta for r in rows])
        e = np.array([r.mean_error for r in rows])
        ax.loglog(d, e, "o", color=color, label=f"p = {p:g}")
        if len(rows) == 0:
            slopes[p] = None
            continue
        # reference slope p/2 anchored at the finest step
        anchor = np.argmin(d)
        ref = e[anchor] * (d / d[anchor]) ** (p / 2)
        ax.loglog(d, ref, ":", color="gray", label=f"reference slope {p / 2:.2f}")
        try:
            fit = fit_rate(table, p)
        except InsufficientDataError:
            slopes[p] = None
            ax.annotate(f"p = {p:g}: {len(rows)} points, no fit", xy=(0.03, 0.95 - 0.07 * i),
                        xycoords="axes fraction", fontsize=9)
            continue
        slopes[p] = fit.slope
        ax.loglog(d, fit.constant * d ** fit.slope, "-", color=color, label=f"fit slope {fit.slope:.2f}")
    ax.set_xlabel("step delta")
    ax.set_ylabel("mean error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, out)
    return slopes


def emit_plot(csv_path, out) -> dict:
    """Read an error CSV and draw it; malformed rows raise with their row number."""
    try:
        text = Path(csv_path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"{csv_path}: cannot read ({exc.strerror})") from None
    table = ErrorTable.from_csv(text)
    return plot_error_table(table, out, title=Path(csv_path).stem)


def _read_columns(text, names):
    reader = csv.DictReader(io.StringIO(text))
    missing = [n for n in names if n not in (reader.fieldnames or [])]
    if missing:
        raise ConfigurationError(f"missing columns {missing}")
    cols = {n: [] for n in names}
    for lineno, row in enumerate(reader, start=2):
        try:
            for n in names:
                cols[n].append(float(row[n]))
        except (TypeError, ValueError):
            raise ConfigurationError(f"row {lineno}: malformed values {row}") from None
    return {n: np.array(v) for n, v in cols.items()}


def plot_truncation(csv_text: str, out):
    c = _read_columns(csv_text, ["k", "mean_diff", "exit_fraction"])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(c["k"], c["mean_diff"], "o-", label="mean sup difference")
    ax.plot(c["k"], c["exit_fraction"], "s--", label="exit fraction")
    ax.set_xscale("log")
    ax.set_xlabel("truncation radius k")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, out)


def plot_scaling(csv_text: str, out):
    c = _read_columns(csv_text, ["length", "sup_grad", "ratio"])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(c["length"], c["sup_grad"], "o-", label="sup |u_x|")
    if np.all(c["sup_grad"] > 0):
        lo = c["length"].min()
        ref = c["sup_grad"][np.argmin(c["length"])] * np.sqrt(c["length"] / lo)
        ax.loglog(c["length"], ref, ":", color="gray", label="slope 1/2")
    ax.set_xlabel("interval length")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, out)


def slope_label(slope) -> str:
    return "no fit" if slope is None or not math.isfinite(slope) else f"{slope:.2f}"
