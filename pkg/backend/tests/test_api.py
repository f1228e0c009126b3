"""
HTTP 接口
"""

import pytest
from fastapi.testclient import TestClient

from app.api.routes.runs import run_slots
from app.core.config import settings
from main import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_curvature_endpoint(client):
    payload = {"n_nodes": 6, "edges": [[i, (i + 1) % 6] for i in range(6)]}
    response = client.post("/api/v1/analysis/curvature", json=payload)
    assert response.status_code == 200
    rows = response.json()
    assert len(rows) == 6
    assert all(r["ricci"] == 0.0 for r in rows)


def test_energy_endpoint(client):
    payload = {"n_nodes": 2, "edges": [[0, 1]], "features": [1.0, -1.0], "dim": 1}
    response = client.post("/api/v1/analysis/energy", json=payload)
    assert response.status_code == 200
    assert response.json()["edge_sum"] == pytest.approx(4.0)
    assert response.json()["trace_form"] == pytest.approx(4.0)

    missing = client.post("/api/v1/analysis/energy", json={"n_nodes": 2, "edges": [[0, 1]]})
    assert missing.status_code == 400


def test_bad_graph_is_rejected(client):
    response = client.post("/api/v1/analysis/curvature", json={"n_nodes": 2, "edges": [[0, 0]]})
    assert response.status_code == 400


def test_bound_factors_endpoint(client):
    rows = client.post("/api/v1/analysis/bound-factors", json={"d_max": 4, "nu_max": 4}).json()
    assert [r["nu"] for r in rows] == [2, 3, 4]
    assert rows[0]["order_factor"] == 8.0


def test_dataset_endpoint(client):
    spec = {"count": 2, "n_nodes_min": 8, "n_nodes_max": 9, "feature_dim": 3, "target": "clust-emph"}
    response = client.post("/api/v1/datasets", json=spec)
    assert response.status_code == 200
    assert response.json()["count"] == 2
    assert client.post("/api/v1/datasets", json={"edge_prob_min": 2.0}).status_code == 422


def test_run_lifecycle(client, tmp_path):
    config = {
        "dataset": {"count": 4, "n_nodes_min": 8, "n_nodes_max": 9, "feature_dim": 2, "target": "clust-emph"},
        "model": {"nu": 3, "layers": 1, "hidden_dim": 3, "enumeration_cap": 4},
        "epochs": 2,
        "out_dir": str(tmp_path),
    }
    created = client.post("/api/v1/runs", json=config)
    assert created.status_code == 200
    run_id = created.json()["run_id"]

    # TestClient 在响应后同步执行后台任务
    run = client.get(f"/api/v1/runs/{run_id}").json()
    assert run["status"] == "completed"
    assert run["summary"]["bound_satisfied"] is True
    assert run_id in [r["run_id"] for r in client.get("/api/v1/runs", params={"command": "train"}).json()]

    evaluated = client.post(f"/api/v1/runs/{run_id}/eval",
                            json={"dataset_path": str(tmp_path / run_id / "dataset")})
    assert evaluated.status_code == 200
    assert evaluated.json()["n_graphs"] == 4

    assert client.post(f"/api/v1/runs/{run_id}/eval", json={}).status_code == 400


def test_run_validation_and_missing(client):
    assert client.post("/api/v1/runs", json={"epochs": 1}).status_code == 422
    assert client.get("/api/v1/runs/train-unknown").status_code == 404


def test_background_runs_are_limited(client, tmp_path):
    config = {
        "dataset": {"count": 4, "n_nodes_min": 8, "n_nodes_max": 9, "feature_dim": 2, "target": "clust-emph"},
        "model": {"nu": 2, "layers": 1, "hidden_dim": 3},
        "epochs": 1,
        "out_dir": str(tmp_path),
    }
    held = 0
    while run_slots.acquire(blocking=False):
        held += 1
    try:
        assert held == settings.MAX_CONCURRENT_RUNS
        response = client.post("/api/v1/runs", json=config)
        assert response.status_code == 429
    finally:
        for _ in range(held):
            run_slots.release()

    assert client.post("/api/v1/runs", json=config).status_code == 200
    # 后台任务结束后槽位全部归还
    for _ in range(settings.MAX_CONCURRENT_RUNS):
        assert run_slots.acquire(blocking=False)
    for _ in range(settings.MAX_CONCURRENT_RUNS):
        run_slots.release()
