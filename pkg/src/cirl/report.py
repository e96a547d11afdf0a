"""Tidy plot data, SVG line charts and benchmark summary tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import EnsembleSummary, summarize

PLOT_COLUMNS = ("day", "series_name", "value", "q1", "q3")
SUMMARY_COLUMNS = ("method", "scenario", "metric", "median", "q1", "q3", "mdr", "n_replicas", "n_present")
TABLE_METRICS = ("delay", "mdr", "rmse", "mae")


def fmt(x) -> str:
    """Shortest round-tripping text for a number; empty for missing values."""
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


@dataclass(frozen=True)
class PlotRow:
    day: int
    series_name: str
    value: float
    q1: float | None = None
    q3: float | None = None


def line_rows(name: str, days: Sequence[int], values: Sequence[float]) -> list[PlotRow]:
    return [PlotRow(int(d), name, float(v)) for d, v in zip(days, values) if not math.isnan(float(v))]


def band_rows(name: str, trajectories: Iterable) -> list[PlotRow]:
    """Per-day median and quartiles across trajectories (each with ``days``/``values``)."""
    per_day: dict[int, list[float]] = {}
    for tr in trajectories:
        for d, v in zip(tr.days, tr.values):
            per_day.setdefault(int(d), []).append(float(v))
    rows = []
    for d in sorted(per_day):
        s = summarize(per_day[d])
        if s.median is not None:
            rows.append(PlotRow(d, name, s.median, s.q1, s.q3))
    return rows


def write_plot_csv(rows: Sequence[PlotRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for r in rows:
            w.writerow([r.day, r.series_name, fmt(r.value), fmt(r.q1), fmt(r.q3)])


def read_plot_csv(path) -> list[PlotRow]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            PlotRow(
                int(r["day"]),
                r["series_name"],
                float(r["value"]),
                float(r["q1"]) if r["q1"] else None,
                float(r["q3"]) if r["q3"] else None,
            )
            for r in reader
        ]


def render_svg(rows: Sequence[PlotRow], title: str, ylabel: str, hline: float | None = None) -> str:
    """Self-contained SVG line chart; quartile bands are shaded when present."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt and no date keep the markup identical between runs
    with matplotlib.rc_context({"svg.hashsalt": "cirl", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        names = list(dict.fromkeys(r.series_name for r in rows))
        for name in names:
            sel = [r for r in rows if r.series_name == name]
            days = [r.day for r in sel]
            (line,) = ax.plot(days, [r.value for r in sel], lw=1.4, label=name)
            if all(r.q1 is not None for r in sel):
                ax.fill_between(days, [r.q1 for r in sel], [r.q3 for r in sel], color=line.get_color(), alpha=0.2, lw=0)
        if hline is not None:
            ax.axhline(hline, color="grey", lw=0.8, ls="--")
        ax.set_xlabel("day")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if names:
            ax.legend(fontsize=8, frameon=False)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def write_svg(rows: Sequence[PlotRow], path, title: str, ylabel: str, hline: float | None = None) -> None:
    Path(path).write_text(render_svg(rows, title, ylabel, hline))


# ---------------------------------------------------------------------------
# summary tables


@dataclass(frozen=True)
class SummaryRow:
    method: str
    scenario: str
    metric: str
    summary: EnsembleSummary


def write_summary_csv(rows: Sequence[SummaryRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            s = r.summary
            w.writerow(
                [r.method, r.scenario, r.metric, fmt(s.median), fmt(s.q1), fmt(s.q3), fmt(s.mdr), s.n_replicas, s.n_present]
            )


def format_table(rows: Sequence[SummaryRow], digits: int = 2) -> str:
    """Aligned text table: one line per (method, scenario), columns delay/MDR/RMSE/MAE."""
    cells: dict[tuple[str, str], dict[str, str]] = {}
    for r in rows:
        key = (r.method, r.scenario)
        cells.setdefault(key, {})
        if r.metric == "delay":
            cells[key]["delay"] = r.summary.format(digits)
            cells[key]["mdr"] = f"{r.summary.mdr:.{digits}f}"
        elif r.metric in TABLE_METRICS:
            cells[key][r.metric] = r.summary.format(digits)
    header = ["method", "scenario", "delay", "MDR", "RMSE", "MAE"]
    body = [[m, s, *(c.get(k, "") for k in TABLE_METRICS)] for (m, s), c in cells.items()]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    line = lambda row: "  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip()  # noqa: E731
    out = [line(header), line(["-" * w for w in widths])]
    out.extend(line(row) for row in body)
    return "\n".join(out) + "\n"


def summary_rows(method: str, scenario: str, metrics: dict[str, list], missed: list[bool] | None) -> list[SummaryRow]:
    """Summaries for one method on one scenario; ``missed`` applies to the delay metric."""
    rows = []
    for name, values in metrics.items():
        flags = missed if name == "delay" else None
        rows.append(SummaryRow(method, scenario, name, summarize(values, flags)))
    return rows

