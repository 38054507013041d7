"""Plot-ready data: one CSV per report panel, optional SVG line charts."""

from __future__ import annotations

from pathlib import Path

from .experiments import ExperimentReport, Panel

# x column, y column, log axes
_CHART_LAYOUT = {
    "error_decay": ("m", "median_abs_err", True),
    "slg_gap": ("algo", "mean_best", False),
    "amplification": ("algo", "mean_best", False),
    "regret": ("m", "regret", True),
    "qq_global": ("theoretical_q", "empirical_q", False),
    "qq_tail": ("theoretical_q", "empirical_q", False),
    "schedule": ("N", "m", False),
}


def emit_plot_data(report: ExperimentReport, out_dir: str | Path, *, svg: bool = False) -> list[Path]:
    """Write ``<panel>.csv`` for every panel (the main table if there are none)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panels = report.panels or [report.table]
    written = []
    for panel in panels:
        path = out / f"{panel.name}.csv"
        path.write_text(panel.csv_text())
        written.append(path)
        if svg and panel.rows and panel.name in _CHART_LAYOUT:
            written.append(_render_svg(panel, out / f"{panel.name}.svg"))
    return written


def _render_svg(panel: Panel, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps generated element ids stable between runs
    matplotlib.rcParams["svg.hashsalt"] = "tailbon"
    x_col, y_col, log = _CHART_LAYOUT[panel.name]
    xs = [r[x_col] for r in panel.rows]
    ys = [float(r[y_col]) for r in panel.rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if panel.name.startswith("qq_"):
        ax.plot(xs, ys, ".", ms=2)
        lo, hi = min(min(xs), min(ys)), max(max(xs), max(ys))
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    else:
        ax.plot(xs, ys, "o-")
    if log:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(x_col)
    ax.set_ylabel(y_col)
    ax.set_title(panel.name)
    fig.tight_layout()
    # no timestamp, so reruns give identical files
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
