from apps.harness.export import (
    COLUMNS,
    CSV_HEADER,
    PLOT_COLUMNS,
    cost_curve_series,
    emit_csv,
    emit_plotdata,
    improvement_series,
    read_csv,
    report_series,
)
from apps.harness.metrics import IterationMetrics, MetricsReport


def _report(iterations=25, routing="gwtf"):
    report = MetricsReport("homogeneous-0", 3, routing, "gwtf")
    for i in range(iterations):
        report.iterations.append(IterationMetrics(i, 4.0, 0.5, 8, 8, 0.0, 2.0, 30, {"crash": 1} if i == 2 else {}))
    return report


def test_empty_report_writes_header_only(tmp_path):
    path = emit_csv(_report(iterations=0), tmp_path / "empty.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1].split(",") == COLUMNS
    assert len(lines) == 2


def test_one_row_per_iteration_plus_aggregate(tmp_path):
    frame = read_csv(emit_csv(_report(), tmp_path / "out" / "run.csv"))
    assert list(frame.columns) == COLUMNS
    assert len(frame) == 26
    assert (frame["row_type"] == "iteration").sum() == 25

    aggregate = frame[frame["row_type"] == "aggregate"].iloc[0]
    assert aggregate["throughput"] == 8
    assert aggregate["duration"] == 100.0
    assert aggregate["recovery_crash"] == 1
    assert frame[frame["row_type"] == "iteration"]["recovery_deny"].sum() == 0


def test_several_reports_share_one_file(tmp_path):
    frame = read_csv(emit_csv([_report(3), _report(2, routing="greedy")], tmp_path / "both.csv"))
    assert len(frame) == 3 + 1 + 2 + 1
    assert set(frame["routing"]) == {"gwtf", "greedy"}


def test_baseline_series_are_suffixed(tmp_path):
    series = {}
    series.update(report_series(_report(3), "time_per_microbatch", "gwtf"))
    series.update(report_series(_report(3, routing="greedy"), "time_per_microbatch", "greedy"))
    assert set(series) == {"time_per_microbatch_gwtf", "time_per_microbatch_greedy"}

    frame = read_csv(emit_plotdata(series, tmp_path / "plot.csv"))
    assert list(frame.columns) == PLOT_COLUMNS
    assert len(frame) == 6


def test_cost_curve_series():
    series = cost_curve_series([(0, 0, 0.0), (1, 2, 40.0)], "seed0")
    assert series["cost_seed0"] == [(0, 0.0), (1, 40.0)]
    assert series["flows_seed0"] == [(0, 0), (1, 2)]


def test_improvement_bars_per_setting():
    series = improvement_series({"random": {"addition-1": -0.1}, "gwtf": {"addition-1": 0.3, "addition-2": 0.2}})
    assert list(series) == ["improvement_gwtf", "improvement_random"]
    assert series["improvement_gwtf"] == [("addition-1", 0.3), ("addition-2", 0.2)]
