import uuid

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from rest_framework.test import APIClient

from apps.harness.experiments import run_experiment
from apps.harness.export import read_csv
from apps.harness.models import ExperimentRun, IterationMetric
from apps.harness.scenarios import load_scenario
from apps.harness.services import run_service

pytestmark = pytest.mark.django_db


@pytest.fixture
def client():
    return APIClient()


@pytest.fixture
def config():
    return load_scenario("homogeneous-0", iterations=2)


# ====
# run service
# ====

def test_record_stores_iterations_and_summary(config):
    result = run_experiment(config)
    run = run_service.record(run_service.start(config), result)

    run.refresh_from_db()
    assert run.status == "completed"
    assert run.trace_hash == result.trace_hash
    assert run.summary["throughput"] == 8
    assert run.config["name"] == "homogeneous-0"
    assert IterationMetric.objects.filter(run=run).count() == 2


def test_fail_keeps_the_error(config):
    run = run_service.fail(run_service.start(config), RuntimeError("boom"))
    run.refresh_from_db()
    assert run.status == "failed"
    assert run.error == "boom"
    assert run.finished_at is not None


def test_infinite_values_are_stored_as_null(config):
    run = run_service.complete(run_service.start(config), {"before": float("inf"), "nested": {"x": float("nan")}})
    run.refresh_from_db()
    assert run.summary == {"before": None, "nested": {"x": None}}


# ====
# API
# ====

def test_list_runs_filters(client, config):
    run_service.complete(run_service.start(config), {})
    run_service.fail(run_service.start(config.replace(name="other")), "x")

    assert len(client.get("/api/runs/").json()) == 2
    runs = client.get("/api/runs/", {"status": "failed"}).json()
    assert [r["scenario"] for r in runs] == ["other"]
    assert len(client.get("/api/runs/", {"scenario": "homogeneous-0", "limit": 5}).json()) == 1


def test_list_runs_rejects_bad_limit(client):
    assert client.get("/api/runs/", {"limit": "many"}).status_code == 400


def test_run_detail_and_iterations(client, config):
    run = run_service.record(run_service.start(config), run_experiment(config))

    detail = client.get(f"/api/runs/{run.id}/").json()
    assert detail["status"] == "completed"
    assert detail["iteration_count"] == 2
    assert detail["config"]["stages"] == 6

    iterations = client.get(f"/api/runs/{run.id}/iterations/").json()
    assert [i["iteration"] for i in iterations] == [0, 1]
    assert all(i["throughput"] == 8 for i in iterations)


def test_unknown_run_is_404(client):
    response = client.get(f"/api/runs/{uuid.uuid4()}/")
    assert response.status_code == 404
    assert response.json() == {"error": "Run not found"}
    assert client.get(f"/api/runs/{uuid.uuid4()}/iterations/").status_code == 404


def test_health_check(client):
    body = client.get("/health/").json()
    assert body["status"] == "healthy"
    assert body["database"] == "connected"
    assert body["scenarios"] >= 18


# ====
# management commands
# ====

def test_run_command_writes_csv_and_records_run(tmp_path):
    call_command("run", "homogeneous-0", "--iterations", "1", "--out", str(tmp_path))
    frame = read_csv(tmp_path / "homogeneous-0.csv")
    assert list(frame["row_type"]) == ["iteration", "aggregate"]
    assert (tmp_path / "homogeneous-0.plot.csv").exists()
    assert ExperimentRun.objects.get().status == "completed"


def test_run_command_without_db(tmp_path):
    call_command("run", "homogeneous-0", "--iterations", "1", "--out", str(tmp_path), "--no-db")
    assert ExperimentRun.objects.count() == 0


def test_unknown_scenario_is_a_command_error(tmp_path):
    with pytest.raises(CommandError):
        call_command("run", "no-such-scenario", "--out", str(tmp_path))


def test_invalid_scenario_file_is_a_command_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: bad\nstages: 3\nrelays: 1\n")
    with pytest.raises(CommandError):
        call_command("run", str(bad), "--out", str(tmp_path))


def test_compare_rejects_unknown_routing(tmp_path):
    with pytest.raises(CommandError):
        call_command("compare", "homogeneous-0", "--routing", "gwtf,swarm", "--out", str(tmp_path))


def test_compare_needs_training_scenario(tmp_path):
    with pytest.raises(CommandError):
        call_command("compare", "flow-1", "--out", str(tmp_path))


def test_compare_writes_suffixed_series(tmp_path):
    call_command("compare", "homogeneous-0", "--iterations", "1", "--out", str(tmp_path), "--no-db")
    series = set(read_csv(tmp_path / "homogeneous-0-compare.plot.csv")["series"])
    assert {"throughput_gwtf", "throughput_greedy"} <= series


def test_trace_command_prints_hash(tmp_path, capsys):
    call_command("trace", "homogeneous-0", "--iterations", "1", "--seed", "2", "--out", str(tmp_path))
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines[-1]) == 64
    assert (tmp_path / "homogeneous-0-seed2.trace.jsonl").exists()
