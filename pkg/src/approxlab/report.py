"""Delimited reports and figures.

All numeric output funnels through one formatting layer (fixed per-column
precision, round-half-up) so emitted CSV artifacts diff cleanly across
platforms.  Figures are rendered to files with the Agg backend; every power
figure is a weighted-area proxy, and axis labels say so.
"""

from __future__ import annotations

import csv
import decimal
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def format_num(value, decimals: int) -> str:
    """Fixed-precision decimal string, ties rounded half-up."""
    if value is None:
        return ""
    q = decimal.Decimal(1).scaleb(-decimals)
    d = decimal.Decimal(repr(float(value))).quantize(
        q, rounding=decimal.ROUND_HALF_UP)
    return f"{d:f}"


# column name -> decimals; percentages at table precision, small normalized
# magnitudes keep more digits
_PRECISION = {
    "er_pct": 2, "mre_pct": 2, "wcre_pct": 2, "relative_power_pct": 2,
    "accuracy_pct": 2, "accuracy_drop_pct": 2, "power_drop_pct": 2,
    "baseline_accuracy_pct": 2,
    "mae_pct": 4, "wce_pct": 4, "mse_norm": 8,
    "mae": 4, "mse": 4, "mre": 6, "er": 6, "wcre": 4,
    "area": 1, "delay": 1, "power_proxy": 1, "mult_fraction_pct": 2,
}


def format_cell(column: str, value) -> str:
    if value is None:
        return ""
    if column in _PRECISION:
        return format_num(value, _PRECISION[column])
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(col, row.get(col)) for col in header])


# ---------------------------------------------------------------------------
# Row builders
# ---------------------------------------------------------------------------

EVAL_HEADER = ["id", "er_pct", "mae_pct", "wce_pct", "mre_pct", "wcre_pct",
               "mse_norm", "wce", "mae", "area", "delay", "active_gates",
               "relative_power_pct", "mode"]


def eval_row(name: str, error, cost) -> dict:
    return {
        "id": name,
        "er_pct": error.er * 100, "mae_pct": error.mae_pct,
        "wce_pct": error.wce_pct, "mre_pct": error.mre * 100,
        "wcre_pct": error.wcre * 100, "mse_norm": error.mse_norm,
        "wce": error.wce, "mae": error.mae,
        "area": cost.area, "delay": cost.delay_proxy,
        "active_gates": cost.active_gates,
        "relative_power_pct": None if cost.relative_power is None
        else cost.relative_power * 100,
        "mode": error.mode,
    }


LAYERWISE_HEADER = ["layer_index", "layer_tag", "mult_fraction_pct", "lut",
                    "accuracy_pct", "accuracy_drop_pct", "power_drop_pct"]


def layerwise_rows(report) -> list[dict]:
    return [{
        "layer_index": r.layer_index, "layer_tag": r.layer_name,
        "mult_fraction_pct": r.mult_fraction * 100, "lut": r.lut_id,
        "accuracy_pct": r.accuracy * 100,
        "accuracy_drop_pct": r.accuracy_drop * 100,
        "power_drop_pct": r.power_drop * 100,
    } for r in report.layer_rows]


FULL_HEADER = ["multiplier", "relative_power_pct", "mae_pct", "wce_pct",
               "mre_pct", "wcre_pct", "er_pct", "accuracy_pct",
               "accuracy_drop_pct", "power_drop_pct"]


def full_rows(report) -> list[dict]:
    rows = []
    for r in report.full_rows:
        e = r.error
        rows.append({
            "multiplier": r.lut_id,
            "relative_power_pct": r.relative_power * 100,
            "mae_pct": None if e is None else e.mae_pct,
            "wce_pct": None if e is None else e.wce_pct,
            "mre_pct": None if e is None else e.mre * 100,
            "wcre_pct": None if e is None else e.wcre * 100,
            "er_pct": None if e is None else e.er * 100,
            "accuracy_pct": r.accuracy * 100,
            "accuracy_drop_pct": r.accuracy_drop * 100,
            "power_drop_pct": r.power_drop * 100,
        })
    return rows


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def fig_library(entries, front, metric: str, out_png) -> None:
    """Scatter of the whole library with the Pareto front highlighted."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    xs = [e.cost.power_proxy for e in entries]
    ys = [e.error.value(metric) for e in entries]
    ax.scatter(xs, ys, s=12, c="#9fb4c7", label="library")
    fx = [e.cost.power_proxy for e in front]
    fy = [e.error.value(metric) for e in front]
    order = sorted(range(len(fx)), key=lambda i: fx[i])
    ax.plot([fx[i] for i in order], [fy[i] for i in order], "o-",
            c="#c0392b", ms=5, lw=1.2, label="pareto front")
    ax.set_xlabel("power proxy (weighted gate area)")
    ax.set_ylabel(metric)
    if any(y > 0 for y in ys):
        ax.set_yscale("symlog", linthresh=max(min(y for y in ys if y > 0), 1e-12))
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{metric} vs power proxy")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)


def fig_layerwise(rows: list[dict], baseline_pct: float, out_png) -> None:
    """Accuracy drop vs power drop, one color per layer."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    tags = sorted({(r["layer_index"], r["layer_tag"]) for r in rows})
    cmap = plt.get_cmap("tab10")
    for i, (idx, tag) in enumerate(tags):
        pts = [r for r in rows if r["layer_index"] == idx]
        frac = pts[0]["mult_fraction_pct"]
        ax.scatter([p["power_drop_pct"] for p in pts],
                   [p["accuracy_drop_pct"] for p in pts],
                   s=18, color=cmap(i % 10),
                   label=f"{tag} ({format_num(frac, 1)}% of mults)")
    ax.set_xlabel("power drop [%] (area proxy)")
    ax.set_ylabel("accuracy drop [%]")
    ax.set_title(f"single-layer replacement (baseline "
                 f"{format_num(baseline_pct, 2)}%)")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)


def fig_full(rows: list[dict], baseline_pct: float, out_png) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.2))
    xs = [r["relative_power_pct"] for r in rows]
    ys = [r["accuracy_pct"] for r in rows]
    ax.scatter(xs, ys, s=20, c="#2c597d")
    ax.axhline(baseline_pct, color="#999999", lw=0.8, ls="--",
               label="exact-multiplier baseline")
    ax.set_xlabel("relative power [%] (area proxy)")
    ax.set_ylabel("accuracy [%]")
    ax.set_title("full multiplier replacement")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)


def fig_trace(rows: list[dict], out_png) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.2))
    gens = [r["generation"] for r in rows]
    ax.plot(gens, [r["best_cost"] for r in rows], "-", c="#2c597d",
            label="best cost (area)")
    ax2 = ax.twinx()
    ax2.plot(gens, [r["best_error"] for r in rows], "-", c="#c0392b",
             label="best error")
    ax.set_xlabel("generation")
    ax.set_ylabel("area")
    ax2.set_ylabel("error")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
