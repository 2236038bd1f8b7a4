"""HTTP service tests, exercised in-process with the test client."""

import json

import pytest
from fastapi.testclient import TestClient

import pareto_tuner
from pareto_tuner.experiment import ExperimentConfig, run_experiment
from pareto_tuner.nsga2 import MODE_WEIGHTED, QUALITY_ONLY_WEIGHTS
from pareto_tuner.service import app
from pareto_tuner.space import default_space, space_to_dict

SMALL_CONFIG = {
    "base_prompt": "a photo of a cat",
    "population_size": 6,
    "generations": 2,
    "repeats": 2,
    "master_seed": 5,
}


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def archive_dirs(tmp_path_factory):
    """Two small archive directories: pareto side and quality-only side."""
    root = tmp_path_factory.mktemp("service-archives")
    config_a = ExperimentConfig(
        base_prompt="a photo of a cat", population_size=6, generations=2, repeats=2, master_seed=5
    )
    config_b = ExperimentConfig(
        base_prompt="a photo of a cat",
        population_size=6,
        generations=2,
        repeats=2,
        master_seed=5,
        mode=MODE_WEIGHTED,
        weights=QUALITY_ONLY_WEIGHTS,
    )
    run_experiment(config_a, root / "a")
    run_experiment(config_b, root / "b")
    return root / "a", root / "b"


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["version"] == pareto_tuner.__version__


def test_space_default(client):
    response = client.get("/space/default")
    assert response.status_code == 200
    assert response.json() == space_to_dict(default_space())


def test_runs_endpoint_executes_experiment(client, tmp_path):
    body = {"config": SMALL_CONFIG, "out_dir": str(tmp_path)}
    response = client.post("/runs", json=body)
    assert response.status_code == 200
    doc = response.json()
    assert doc["output_dir"] == str(tmp_path)
    assert len(doc["runs"]) == 2
    for index, run in enumerate(doc["runs"]):
        assert run["index"] == index
        assert run["records"] > 0
        assert run["incomplete"] is False
        assert (tmp_path / f"run-{index:03d}.jsonl").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["master_seed"] == 5


def test_runs_rejects_unknown_config_key(client, tmp_path):
    body = {"config": {"swarm_size": 10}, "out_dir": str(tmp_path)}
    response = client.post("/runs", json=body)
    assert response.status_code == 400
    doc = response.json()
    assert doc["error"] == "config_error"
    assert "swarm_size" in doc["detail"]


def test_runs_maps_backend_failure_to_502(client, tmp_path):
    config = dict(SMALL_CONFIG)
    config.update(
        {"repeats": 1, "evaluator": "external", "backend_command": ["/nonexistent/evaluator"]}
    )
    response = client.post("/runs", json={"config": config, "out_dir": str(tmp_path)})
    assert response.status_code == 502
    assert response.json()["error"] == "evaluator_failure"


def test_runs_rejects_malformed_body(client):
    response = client.post("/runs", json={"config": "not an object"})
    assert response.status_code == 400
    assert response.json()["error"] == "config_error"


def test_compare_endpoint(client, archive_dirs):
    dir_a, dir_b = archive_dirs
    body = {"dir_a": str(dir_a), "dir_b": str(dir_b), "label_a": "pareto", "label_b": "baseline"}
    response = client.post("/compare", json=body)
    assert response.status_code == 200
    doc = response.json()
    assert "pareto" in doc["summary"] and "baseline" in doc["summary"]
    assert doc["side_a"]["n_runs"] == 2
    assert doc["side_b"]["n_runs"] == 2
    assert doc["time_ratio_b_over_a"] > 0
    assert doc["hv_ratio_a_over_b"] > 0
    assert "\t" in doc["table"]


def test_compare_missing_directory_is_config_error(client, archive_dirs, tmp_path):
    dir_a, _ = archive_dirs
    response = client.post("/compare", json={"dir_a": str(dir_a), "dir_b": str(tmp_path / "nope")})
    assert response.status_code == 400
    assert response.json()["error"] == "config_error"


def test_compare_requires_both_ref_coordinates(client, archive_dirs):
    dir_a, dir_b = archive_dirs
    body = {"dir_a": str(dir_a), "dir_b": str(dir_b), "ref_time_ms": 50000.0}
    response = client.post("/compare", json=body)
    assert response.status_code == 400
    assert "both" in response.json()["detail"]


def test_importance_endpoint(client, archive_dirs):
    dir_a, _ = archive_dirs
    body = {"archive_dir": str(dir_a), "target": "time", "repeats": 1, "search_budget": 1}
    response = client.post("/importance", json=body)
    assert response.status_code == 200
    doc = response.json()
    assert doc["target"] == "time"
    names = [entry["name"] for entry in doc["features"]]
    assert "inference_steps" in names
    assert all(entry["mean"] >= 0 for entry in doc["features"])
    group_names = [entry["name"] for entry in doc["groups"]]
    assert "positive_prompt" in group_names
    assert doc["table"] and doc["groups_table"] and doc["chart"]
    assert doc["uniform_fallbacks"] == 0


def test_importance_rejects_bad_target(client, archive_dirs):
    dir_a, _ = archive_dirs
    body = {"archive_dir": str(dir_a), "target": "speed", "repeats": 1, "search_budget": 1}
    response = client.post("/importance", json=body)
    assert response.status_code == 400
    assert response.json()["error"] == "config_error"


def test_importance_empty_directory_is_config_error(client, tmp_path):
    body = {"archive_dir": str(tmp_path), "target": "time", "repeats": 1, "search_budget": 1}
    response = client.post("/importance", json=body)
    assert response.status_code == 400
    assert "archive" in response.json()["detail"]
