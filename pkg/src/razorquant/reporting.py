"""CSV writers and matplotlib figure rendering for the CLI report paths.

Figures are built straight from Figure objects on the Agg canvas (no
pyplot, no global state) and saved with pinned PNG metadata so repeated
runs produce byte-identical files.  matplotlib is imported lazily; the
non-reporting subcommands never pay for it.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .tensorio import atomic_write_bytes

__all__ = [
    "write_csv",
    "save_figure",
    "figure_path_for",
    "compression_figure",
    "alloc_figure",
    "sweep_figure",
    "layer_histogram_figure",
    "mismatch_figure",
    "training_figure",
]

_PNG_META = {"Software": "razorquant 0.1.0"}
_DPI = 120


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Write rows atomically with '\\n' line endings and %.10g floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def figure_path_for(csv_path: str | Path) -> Path:
    """Sibling PNG path for a CSV output (same directory, same stem)."""
    return Path(csv_path).with_suffix(".png")


def _new_figure(width: float = 6.4, height: float = 4.2):
    from matplotlib.figure import Figure

    return Figure(figsize=(width, height), dpi=_DPI)


def save_figure(fig, path: str | Path) -> None:
    """Render a Figure to PNG via Agg with deterministic metadata."""
    from matplotlib.backends.backend_agg import FigureCanvasAgg

    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=_DPI, metadata=dict(_PNG_META))
    atomic_write_bytes(path, buf.getvalue())


_ROLE_COLORS = {
    "decoder": "#1f77b4",
    "embedding": "#d62728",
    "lm_head": "#9467bd",
    "norm": "#7f7f7f",
    "other": "#2ca02c",
}


def compression_figure(report) -> "object":
    """Per-layer nominal bits by layer index, colored by role."""
    fig = _new_figure()
    ax = fig.add_subplot(111)
    seen = set()
    for i, layer in enumerate(report.layers):
        color = _ROLE_COLORS.get(layer.role, "#2ca02c")
        label = layer.role if layer.role not in seen else None
        seen.add(layer.role)
        ax.plot(i, layer.nominal_bits, ".", color=color, label=label, markersize=4)
    ax.axhline(report.nominal_bits_per_weight, color="k", linewidth=0.8, linestyle="--",
               label=f"avg {report.nominal_bits_per_weight:.3f}")
    ax.set_xlabel("layer index")
    ax.set_ylabel("nominal bits / weight")
    ax.set_title(f"{report.model}: ratio {report.compression_ratio_nominal:.2f}x")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def alloc_figure(reports: dict[str, dict]) -> "object":
    """Bar chart of star discrepancy (and bound) per scheme."""
    fig = _new_figure()
    ax = fig.add_subplot(111)
    names = list(reports)
    xs = range(len(names))
    ax.bar(xs, [reports[n]["discrepancy"] for n in names], width=0.55, color="#1f77b4",
           label="star discrepancy")
    ax.plot(xs, [reports[n]["empirical_gap"] for n in names], "k_", markersize=18,
            label="salience gap")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel("value")
    ax.set_title("allocation uniformity by scheme")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def sweep_figure(rows: list[dict]) -> "object":
    """Log-log discrepancy vs point count, one series per scheme."""
    fig = _new_figure()
    ax = fig.add_subplot(111)
    schemes = sorted({r["scheme"] for r in rows})
    markers = {"super": "o", "stacked": "s", "random": "^"}
    for scheme in schemes:
        pts = sorted((r["n_points"], r["discrepancy"]) for r in rows if r["scheme"] == scheme)
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker=markers.get(scheme, "x"), linestyle="-", label=scheme, markersize=4)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("4-bit rows (N)")
    ax.set_ylabel("star discrepancy")
    ax.set_title("discrepancy scaling by scheme")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def layer_histogram_figure(counts) -> "object":
    """Selection frequency per layer."""
    fig = _new_figure()
    ax = fig.add_subplot(111)
    layers = [i + 1 for i in range(len(counts))]
    ax.bar(layers, list(counts), color="#1f77b4")
    ax.set_xlabel("layer")
    ax.set_ylabel("times selected")
    ax.set_title("feature-distillation layer selection frequency")
    ax.set_xticks(layers)
    fig.tight_layout()
    return fig


def mismatch_figure(rows: list[dict]) -> "object":
    """High-confidence fraction and mismatch fraction vs threshold."""
    fig = _new_figure()
    ax = fig.add_subplot(111)
    ts = [r["threshold"] for r in rows]
    ax.plot(ts, [r["high_confidence_fraction"] for r in rows], "o-", label="high-confidence fraction")
    ax.plot(ts, [r["mismatch_fraction"] for r in rows], "s-", label="mismatch fraction")
    ax.set_xlabel("confidence threshold")
    ax.set_ylabel("fraction of tokens")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("teacher confidence vs label agreement")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def training_figure(history: list[dict]) -> "object":
    """Loss curves with the mixing coefficient on a twin axis."""
    fig = _new_figure(7.0, 4.4)
    ax = fig.add_subplot(111)
    steps = [h["step"] for h in history]
    for key, color in (("task", "#1f77b4"), ("feature", "#2ca02c"), ("logit", "#d62728"), ("total", "k")):
        ax.plot(steps, [h[key] for h in history], color=color, linewidth=1.0, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.plot(steps, [h["lambda"] for h in history], color="#9467bd", linewidth=0.8, alpha=0.7)
    ax2.set_ylabel("mixing coefficient", color="#9467bd")
    ax2.set_ylim(0.0, 1.0)
    ax.set_title("distillation losses")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig
