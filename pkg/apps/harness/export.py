# ===== apps/harness/export.py =====
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import pandas as pd

from .metrics import MetricsReport

logger = logging.getLogger(__name__)

CSV_VERSION = 1
CSV_HEADER = f"# gwtfsim metrics v{CSV_VERSION}"
PLOT_HEADER = f"# gwtfsim plotdata v{CSV_VERSION}"

RECOVERY_COUNTERS = [
    "deny",
    "reroute",
    "timeout",
    "repairs",
    "recomputed_forward",
    "abandoned",
    "missing_activation",
    "crash",
    "join",
    "admitted",
    "phase_violation",
]

COLUMNS = [
    "row_type",
    "scenario",
    "seed",
    "routing",
    "recovery",
    "iteration",
    "duration",
    "time_per_microbatch",
    "throughput",
    "emitted",
    "wasted_compute_time",
    "communication_time",
    "protocol_messages",
] + [f"recovery_{name}" for name in RECOVERY_COUNTERS]

PLOT_COLUMNS = ["series", "x", "y"]

Point = Tuple[float, float]


# ============================================================
# METRICS CSV
# ============================================================

def _rows(report: MetricsReport) -> List[dict]:
    base = {"scenario": report.scenario, "seed": report.seed, "routing": report.routing,
            "recovery": report.recovery}
    rows = []
    for metrics in report.iterations:
        row = {"row_type": "iteration", **base, **metrics.as_row()}
        for name in RECOVERY_COUNTERS:
            row.setdefault(f"recovery_{name}", 0)
        rows.append(row)
    if not rows:
        return rows

    totals = report.aggregate()
    aggregate = {
        "row_type": "aggregate",
        **base,
        "iteration": None,
        "duration": sum(m.duration for m in report.iterations),
        "time_per_microbatch": totals["time_per_microbatch"],
        "throughput": totals["throughput"],
        "emitted": sum(m.emitted for m in report.iterations),
        "wasted_compute_time": totals["wasted_compute_time"],
        "communication_time": totals["communication_time"],
        "protocol_messages": totals["protocol_messages"],
    }
    for name in RECOVERY_COUNTERS:
        aggregate[f"recovery_{name}"] = totals["recovery"].get(name, 0)
    rows.append(aggregate)
    return rows


def metrics_frame(reports: Union[MetricsReport, Iterable[MetricsReport]]) -> pd.DataFrame:
    if isinstance(reports, MetricsReport):
        reports = [reports]
    rows = [row for report in reports for row in _rows(report)]
    return pd.DataFrame(rows, columns=COLUMNS)


def _write(frame: pd.DataFrame, path, header: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(header + "\n")
        frame.to_csv(f, index=False)
    return path


def emit_csv(reports: Union[MetricsReport, Iterable[MetricsReport]], path) -> Path:
    """One row per iteration plus one aggregate row per report, columns in COLUMNS order"""
    frame = metrics_frame(reports)
    path = _write(frame, path, CSV_HEADER)
    logger.info(f"Wrote {len(frame)} metric row(s) to {path}")
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


# ============================================================
# PLOT DATA
# ============================================================

def suffixed(name: str, suffix: str) -> str:
    return f"{name}_{suffix}" if suffix else name


def report_series(report: MetricsReport, metric: str, suffix: str = "") -> Dict[str, List[Point]]:
    points = [(m.iteration, getattr(m, metric)) for m in report.iterations if getattr(m, metric) is not None]
    return {suffixed(metric, suffix): points}


def cost_curve_series(curve: Sequence[Tuple[int, int, float]], suffix: str = "") -> Dict[str, List[Point]]:
    """Sum cost of complete flows per protocol round"""
    return {
        suffixed("cost", suffix): [(r, cost) for r, _, cost in curve],
        suffixed("flows", suffix): [(r, flows) for r, flows, _ in curve],
    }


def improvement_series(improvements: Mapping[str, Mapping[str, float]]) -> Dict[str, List[Point]]:
    """Bars per test setting: {method: {setting: improvement}} -> one series per method"""
    series = {}
    for method, per_setting in sorted(improvements.items()):
        series[suffixed("improvement", method)] = [(setting, value) for setting, value in per_setting.items()]
    return series


def plot_frame(series: Mapping[str, Sequence[Point]]) -> pd.DataFrame:
    rows = [{"series": name, "x": x, "y": y} for name, points in series.items() for x, y in points]
    return pd.DataFrame(rows, columns=PLOT_COLUMNS)


def emit_plotdata(series: Mapping[str, Sequence[Point]], path) -> Path:
    """Long-format (series, x, y) table, one series per curve or bar group"""
    frame = plot_frame(series)
    path = _write(frame, path, PLOT_HEADER)
    logger.info(f"Wrote {len(series)} plot series to {path}")
    return path
