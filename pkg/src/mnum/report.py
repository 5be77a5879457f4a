"""Machine-readable reports, traces, and the figures rendered next to them.

JSON reports use insertion-ordered keys and 17-significant-digit floats so
identical runs produce identical bytes (golden-file friendly); traces are
plain CSV with the same float formatting.  Figure rendering is headless.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EQUILIBRIUM_SCHEMA = "mnum-equilibrium/1"
NUM_SCHEMA = "mnum-singlepath/1"
SIMULATION_SCHEMA = "mnum-simulation/1"

TRACE_COLUMNS = ("outer_step", "inner_step", "source", "rate", "q_est", "dist_to_eq")


# ---------------------------------------------------------------------------
# stable JSON


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"reports must contain finite numbers, got {x}")
    return format(x, ".17g")


def dumps_stable(obj, indent: int = 2) -> str:
    """Serialize with fixed key order and reproducible float formatting."""
    out = []
    _stable(obj, out, indent, 0)
    return "".join(out) + "\n"


def _stable(obj, out, indent, level):
    pad = " " * (indent * (level + 1))
    closing = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, val) in enumerate(obj.items()):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _stable(val, out, indent, level + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(closing + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[\n")
        for i, val in enumerate(items):
            out.append(pad)
            _stable(val, out, indent, level + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(closing + "]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_stable(obj), encoding="utf-8")
    return path


def load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# reports


def equilibrium_report(net, eq) -> dict:
    return {
        "schema": EQUILIBRIUM_SCHEMA,
        "arcs": [a.id for a in net.arcs],
        "sources": [s.id for s in net.sources],
        "lambda": [float(v) for v in eq.lam],
        "w": [float(v) for v in eq.w],
        "x": [float(v) for v in eq.x],
        "q": [float(v) for v in eq.q],
        "objective": float(eq.objective),
        "grad_norm": float(eq.grad_norm),
        "rmnum_residual": float(eq.rmnum_residual),
        "iterations": int(eq.iterations),
        "converged": bool(eq.converged),
        "method": eq.method,
    }


def validate_equilibrium_report(report: dict) -> None:
    """Schema check for re-parsed reports; raises ``ValueError`` on mismatch."""
    required = {
        "schema", "arcs", "sources", "lambda", "w", "x", "q",
        "objective", "grad_norm", "rmnum_residual", "iterations", "converged", "method",
    }
    missing = required - set(report)
    if missing:
        raise ValueError(f"report missing fields {sorted(missing)}")
    if report["schema"] != EQUILIBRIUM_SCHEMA:
        raise ValueError(f"unexpected schema {report['schema']!r}")
    n_arcs, n_src = len(report["arcs"]), len(report["sources"])
    for key, n in (("lambda", n_arcs), ("w", n_arcs), ("x", n_src), ("q", n_src)):
        vals = report[key]
        if len(vals) != n:
            raise ValueError(f"field {key!r}: expected {n} values, got {len(vals)}")
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ValueError(f"field {key!r}: values must be finite numbers")
    for key in ("objective", "grad_norm", "rmnum_residual"):
        if not math.isfinite(report[key]):
            raise ValueError(f"field {key!r} must be finite")


def singlepath_report(net, sol) -> dict:
    return {
        "schema": NUM_SCHEMA,
        "arcs": [a.id for a in net.arcs],
        "sources": [s.id for s in net.sources],
        "routes": [[net.arcs[ai].id for ai in route] for route in sol.routes],
        "p": [float(v) for v in sol.p],
        "q": [float(v) for v in sol.q],
        "x": [float(v) for v in sol.x],
        "objective": float(sol.objective),
        "kkt_residual": float(sol.kkt_residual),
        "iterations": int(sol.iterations),
        "converged": bool(sol.converged),
    }


# ---------------------------------------------------------------------------
# traces


def write_trace_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.outer_step,
                    r.inner_step,
                    r.source,
                    format_float(r.rate),
                    format_float(r.q_est),
                    format_float(r.dist_to_eq),
                ]
            )
    return path


# ---------------------------------------------------------------------------
# figures


def render_equilibrium_figures(stem, net, eq) -> list[Path]:
    """Convergence and link-load figures written next to the report."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []

    fig, axes = plt.subplots(2, 1, figsize=(6.4, 6.0), sharex=True)
    if eq.objective_history:
        hist = np.asarray(eq.objective_history, dtype=float)
        gap = hist - hist.min()
        axes[0].semilogy(np.maximum(gap, 1e-17), lw=1.2)
        axes[0].set_ylabel("objective gap")
    else:
        axes[0].text(0.5, 0.5, "no objective history", ha="center", va="center")
    if eq.gradnorm_history:
        axes[1].semilogy(np.maximum(np.asarray(eq.gradnorm_history, dtype=float), 1e-17), lw=1.2)
    axes[1].set_ylabel("residual")
    axes[1].set_xlabel("iteration")
    axes[0].set_title(f"solver convergence ({eq.method})")
    fig.tight_layout()
    path = stem.with_name(stem.name + "_convergence.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    idx = np.arange(net.n_arcs)
    ax.bar(idx, eq.w, width=0.6, label="load w", color="tab:blue")
    finite_caps = np.isfinite(net.capacity)
    if finite_caps.any():
        ax.plot(idx[finite_caps], net.capacity[finite_caps], "kx", ms=8, label="capacity")
    ax.set_xticks(idx)
    ax.set_xticklabels([a.id for a in net.arcs], rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("flow")
    ax.set_title("equilibrium link loads")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_loads.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


def render_simulation_figures(stem, net, result) -> list[Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    outer = [rec["outer"] for rec in result.outer_records]
    fig, axes = plt.subplots(2, 1, figsize=(6.4, 6.0), sharex=True)

    for k, src in enumerate(net.sources):
        rates = [row.rate for row in result.trace if row.source == src.id and row.inner_step == 1]
        axes[0].plot(range(1, len(rates) + 1), rates, lw=1.0, label=f"source {src.id}")
        axes[0].axhline(float(result.reference.x[k]), color="gray", lw=0.8, ls="--")
    axes[0].set_ylabel("rate")
    axes[0].legend(frameon=False, fontsize=8)
    axes[0].set_title("simulated rates vs equilibrium")

    axes[1].semilogy(outer, np.maximum([rec["rate_dist"] for rec in result.outer_records], 1e-17), lw=1.2, label="rate")
    axes[1].semilogy(outer, np.maximum([rec["tau_dist"] for rec in result.outer_records], 1e-17), lw=1.2, label="delay estimates")
    axes[1].set_xlabel("outer step")
    axes[1].set_ylabel("sup distance to equilibrium")
    axes[1].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_convergence.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return [path]
