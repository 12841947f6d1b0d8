import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from sinkbisim import runio
from sinkbisim.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def wait_job(client, job_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        info = client.get(f"/jobs/{job_id}").json()
        if info["status"] in ("done", "failed"):
            return info
        time.sleep(0.1)
    raise TimeoutError(job_id)


SMALL_CONFIG = {
    "num_states": 20,
    "num_classes": 4,
    "num_steps": 3,
    "alpha_mode": "fixed",
    "alpha": 0.5,
}


class TestHealthAndGenerate:
    def test_health(self, client):
        assert client.get("/health").json() == {"status": "ok"}

    def test_generate_returns_container(self, client):
        resp = client.post(
            "/mdps/generate",
            json={"family": "dense_reward", "num_states": 12, "num_classes": 3},
        )
        assert resp.status_code == 200
        doc = resp.json()
        mdp, labels = runio.mdp_from_dict(doc)
        assert mdp.num_states == 12
        assert labels is not None and labels.max() == 2

    def test_generate_rejects_indivisible(self, client):
        resp = client.post(
            "/mdps/generate",
            json={"family": "ring_sparse", "num_states": 10, "num_classes": 3},
        )
        assert resp.status_code == 422

    def test_generate_deterministic(self, client):
        req = {"family": "ring_sparse", "num_states": 12, "num_classes": 3, "seed": 7}
        a = client.post("/mdps/generate", json=req).json()
        b = client.post("/mdps/generate", json=req).json()
        assert a == b


class TestRunJob:
    def test_run_and_fetch(self, client):
        resp = client.post("/runs", json={"config": SMALL_CONFIG, "seeds": [0, 1]})
        assert resp.status_code == 200
        info = wait_job(client, resp.json()["job_id"])
        assert info["status"] == "done"
        result = client.get(f"/jobs/{info['job_id']}/result").json()
        assert len(result["records"]) == 6
        steps = [r["step"] for r in result["records"]]
        assert steps == [0, 1, 2, 0, 1, 2]

    def test_run_on_supplied_mdp_matches_generation(self, client):
        doc = client.post(
            "/mdps/generate",
            json={"family": "ring_sparse", "num_states": 20, "num_classes": 4, "seed": 5},
        ).json()
        cfg = dict(SMALL_CONFIG, seed=5)
        a = client.post("/runs", json={"config": cfg, "seeds": [5]}).json()
        b = client.post(
            "/runs", json={"config": cfg, "seeds": [5], "mdp": doc}
        ).json()
        res_a = client.get(f"/jobs/{wait_job(client, a['job_id'])['job_id']}/result").json()
        res_b = client.get(f"/jobs/{wait_job(client, b['job_id'])['job_id']}/result").json()
        for ra, rb in zip(res_a["records"], res_b["records"]):
            assert ra["gap_vstar"] == rb["gap_vstar"]
            assert ra["delta_achieved"] == rb["delta_achieved"]

    def test_invalid_config_rejected(self, client):
        bad = dict(SMALL_CONFIG, alpha=0.0)
        resp = client.post("/runs", json={"config": bad, "seeds": [0]})
        assert resp.status_code == 422

    def test_unknown_job_404(self, client):
        assert client.get("/jobs/nope").status_code == 404
        assert client.get("/jobs/nope/result").status_code == 404

    def test_pending_result_conflict(self, client):
        big = dict(SMALL_CONFIG, num_steps=40)
        resp = client.post("/runs", json={"config": big, "seeds": [0]})
        job_id = resp.json()["job_id"]
        r = client.get(f"/jobs/{job_id}/result")
        assert r.status_code in (409, 200)  # may have finished already
        wait_job(client, job_id)


class TestReport:
    def test_aggregation_matches_library(self, client):
        rng = np.random.default_rng(0)
        columns = {c: [] for c in runio.RECORD_COLUMNS}
        for seed in range(3):
            for step in range(4):
                columns["step"].append(step)
                columns["seed"].append(seed)
                for c in runio.RECORD_COLUMNS[2:]:
                    columns[c].append(float(rng.random()))
        resp = client.post("/report", json={"columns": columns})
        assert resp.status_code == 200
        payload = resp.json()
        lib_cols = {
            k: np.asarray(v, dtype=np.float64) for k, v in columns.items()
        }
        lib_cols["step"] = lib_cols["step"].astype(np.int64)
        lib_cols["seed"] = lib_cols["seed"].astype(np.int64)
        steps, agg = runio.aggregate_records(lib_cols)
        assert payload["steps"] == steps.tolist()
        for col, (mean, err) in agg.items():
            assert np.allclose(payload["aggregates"][col]["mean"], mean, atol=1e-15)
            assert np.allclose(payload["aggregates"][col]["stderr"], err, atol=1e-15)

    def test_missing_columns_rejected(self, client):
        resp = client.post("/report", json={"columns": {"step": [0]}})
        assert resp.status_code == 422
