"""Render residual-history, convergence, and heatmap figures from CSVs.

This package consumes only the delimited artifacts written by the solver
harness (iters.csv, convergence.csv, field.csv); it never imports the solver.
Rendering is pure: a given set of CSVs always produces the same annotation
text, and figures can be regenerated without re-running any simulation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("residual_history", "convergence", "heatmap")


class SchemaError(ValueError):
    """Input CSV does not match the harness schema."""


@dataclass
class FigureSpec:
    inputs: list[Path]
    kind: str
    output: Path
    kappa: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self.inputs = [Path(p) for p in self.inputs]
        self.output = Path(self.output)


def read_csv_columns(path: Path, required: tuple[str, ...]) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return {col: [row[col] for row in rows] for col in header}


def fit_decay(residuals: np.ndarray, tail: int = 20) -> float:
    """Geometric decay factor over the last ``tail`` residuals."""
    h = residuals[np.isfinite(residuals) & (residuals > 0.0)]
    if h.size < 3:
        return float("nan")
    h = h[-tail:]
    slope = np.polyfit(np.arange(h.size), np.log(h), 1)[0]
    return float(np.exp(slope))


def render(spec: FigureSpec) -> Path:
    """Produce the figure file; raises SchemaError before writing anything."""
    if spec.kind == "residual_history":
        fig = _residual_history(spec)
    elif spec.kind == "convergence":
        fig = _convergence(spec)
    else:
        fig = _heatmap(spec)
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return spec.output


def _residual_history(spec: FigureSpec):
    series = []
    for path in spec.inputs:
        cols = read_csv_columns(path, ("step", "iter", "residual"))
        steps = np.array([int(s) for s in cols["step"]])
        res = np.array([float(s) for s in cols["residual"]])
        first = res[steps == steps.min()]
        series.append((path.stem if len(spec.inputs) > 1 else path.parent.name,
                       first))
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    annotations = []
    for label, res in series:
        it = np.arange(1, res.size + 1)
        ax.semilogy(it, res, lw=1.2, label=label)
        kfit = fit_decay(res)
        annotations.append(f"{label}: fitted kappa = {kfit:.6f}")
    if spec.kappa is not None:
        ref = series[0][1]
        it = np.arange(1, ref.size + 1)
        ax.semilogy(it, ref[0] * spec.kappa ** (it - 1), "k--", lw=1.0,
                    label=f"reference {spec.kappa:.6f}^k")
        annotations.append(f"analytic kappa = {spec.kappa:.6f}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative residual")
    ax.legend(fontsize=8, loc="upper right")
    ax.text(0.02, 0.04, "\n".join(annotations), transform=ax.transAxes,
            fontsize=8, va="bottom", family="monospace")
    ax.set_title("fixed-point residual history")
    fig.tight_layout()
    return fig


def fitted_orders(levels: np.ndarray, err_f: np.ndarray,
                  err_e: np.ndarray) -> tuple[float, float]:
    """Least-squares slopes of log2(err) against refinement level."""
    pf = -np.polyfit(levels, np.log2(err_f), 1)[0]
    pe = -np.polyfit(levels, np.log2(err_e), 1)[0]
    return float(pf), float(pe)


def _convergence(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    annotations = []
    for path in spec.inputs:
        cols = read_csv_columns(
            path, ("level", "dx", "dv", "dt", "err_f", "rate_f", "err_E", "rate_E"))
        lv = np.array([int(s) for s in cols["level"]])
        dt = np.array([float(s) for s in cols["dt"]])
        ef = np.array([float(s) for s in cols["err_f"]])
        ee = np.array([float(s) for s in cols["err_E"]])
        tag = f"{path.parent.name}: " if len(spec.inputs) > 1 else ""
        ax.loglog(dt, ef, "o-", label=f"{tag}f error")
        ax.loglog(dt, ee, "s-", label=f"{tag}E error")
        pf, pe = fitted_orders(lv, ef, ee)
        annotations.append(f"{tag}fitted order: f = {pf:.2f}, E = {pe:.2f}")
    ax.set_xlabel("dt")
    ax.set_ylabel("relative error")
    ax.legend(fontsize=8, loc="upper left")
    ax.text(0.98, 0.04, "\n".join(annotations), transform=ax.transAxes,
            fontsize=8, va="bottom", ha="right", family="monospace")
    ax.set_title("refinement study")
    fig.tight_layout()
    return fig


def _heatmap(spec: FigureSpec):
    if len(spec.inputs) != 1:
        raise SchemaError("heatmap takes exactly one field.csv input")
    cols = read_csv_columns(spec.inputs[0], ("x", "v", "value"))
    x = np.array([float(s) for s in cols["x"]])
    v = np.array([float(s) for s in cols["v"]])
    val = np.array([float(s) for s in cols["value"]])
    xs = np.unique(x)
    vs = np.unique(v)
    if xs.size * vs.size != val.size:
        raise SchemaError("field.csv points do not form a tensor grid")
    grid = np.full((xs.size, vs.size), np.nan)
    ix = np.searchsorted(xs, x)
    iv = np.searchsorted(vs, v)
    grid[ix, iv] = val
    fig, ax = plt.subplots(figsize=(6.0, 4.6))
    pm = ax.pcolormesh(xs, vs, grid.T, shading="nearest", cmap="viridis")
    fig.colorbar(pm, ax=ax, label="f")
    ax.set_xlabel("x")
    ax.set_ylabel("v")
    ax.set_title("distribution function")
    fig.tight_layout()
    return fig
