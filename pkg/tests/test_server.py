import pytest
from fastapi.testclient import TestClient

from rio import __version__
from rio.server import app

SHORT_SCENARIO = {"scenario": {"trajectory": {"kind": "line", "length": 1.0, "rate": 100.0}}}


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def rows(offset=0.0, n=10):
    return [[0.05 * k, 0.5 * 0.05 * k + offset, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0] for k in range(n)]


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__}


def test_evaluate(client):
    r = client.post("/evaluate", json={"estimate": rows(offset=0.03), "groundtruth": rows()})
    assert r.status_code == 200
    body = r.json()
    assert body["frames"] == 10
    assert body["dropped"] == 0
    assert body["translation_cm"]["rmse"] == pytest.approx(3.0)


@pytest.mark.parametrize(
    "payload",
    [
        {"estimate": [[0.0, 1.0]], "groundtruth": rows()},
        {"estimate": rows(), "groundtruth": [[100.0, 0, 0, 0, 1, 0, 0, 0]]},
        {"estimate": [], "groundtruth": rows()},
    ],
)
def test_evaluate_bad_input(client, payload):
    assert client.post("/evaluate", json=payload).status_code == 400


def test_simulate(client, tmp_path):
    r = client.post("/simulate", json={"config": SHORT_SCENARIO, "seed": 2, "out": str(tmp_path / "data")})
    assert r.status_code == 200
    body = r.json()
    assert body["frames"] == 41
    assert body["path_length_m"] == pytest.approx(1.0, rel=1e-6)
    assert (tmp_path / "data" / "manifest.json").is_file()


def test_simulate_bad_config(client):
    r = client.post("/simulate", json={"config": {"matcher": "nonsense"}})
    assert r.status_code == 400


def test_run_constant_velocity(client):
    r = client.post("/run", json={"config": SHORT_SCENARIO, "variant": "cv"})
    assert r.status_code == 200
    body = r.json()
    assert body["variant"] == "cv"
    assert body["frames"] == len(body["trajectory"]) == 41
    assert body["corrected_frames"] + body["coasted_frames"] <= body["frames"]


def test_run_unknown_variant(client):
    assert client.post("/run", json={"variant": "warp"}).status_code == 422
