"""HTTP endpoints through FastAPI's TestClient"""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.correlation_models import matern
from app.services.ingest import to_frame

client = TestClient(app)


@pytest.fixture
def records(simulated_dataset):
    frame = to_frame(simulated_dataset)
    return [
        {"subject_id": row.subject, "unit_location": row.unit_location, "subunit": row.subunit, "response": row.response}
        for row in frame.itertuples(index=False)
    ]


def test_root_and_health():
    assert client.get("/health").json() == {"status": "healthy"}
    body = client.get("/").json()
    assert body["message"] == "Kernel Correlation API"
    assert body["status"] == "active"


def test_kernel_moments():
    response = client.get("/api/v1/kernels/quartic")
    assert response.status_code == 200
    assert response.json() == {"family": "quartic", "sigma_K_sq": 1.0 / 7.0, "R_K": 5.0 / 7.0}
    assert client.get("/api/v1/kernels/gaussian").status_code == 422


def test_estimate(records):
    config = {"bandwidth": 40.0, "delta_max": 200.0, "delta_points": 11, "domain_length": 2000.0}
    response = client.post("/api/v1/estimate", json={"records": records, "config": config, "surface": True})
    assert response.status_code == 200
    body = response.json()
    assert body["rho"][0] == 1.0
    assert len(body["delta"]) == 11
    assert len(body["g_hat"]) == 3
    assert np.asarray(body["surface"]).shape == (11, 3, 3)
    assert body["kernel"]["bandwidth"]["h"] == 40.0


def test_estimation_errors_are_unprocessable(records):
    config = {"bandwidth": 1e-9, "delta_max": 100.0, "domain_length": 2000.0}
    response = client.post("/api/v1/estimate", json={"records": records, "config": config})
    assert response.status_code == 422
    assert response.json()["detail"]["code"] == "no-support-at-lag"

    response = client.post("/api/v1/bootstrap", json={"records": records, "config": {"bandwidth": 40.0, "delta_max": 100.0}})
    assert response.status_code == 422
    assert response.json()["detail"]["code"] == "config"


def test_invalid_records_are_rejected(records):
    broken = records + [dict(records[0])]
    response = client.post("/api/v1/estimate", json={"records": broken, "config": {"bandwidth": 40.0, "delta_max": 100.0}})
    assert response.status_code == 422
    assert response.json()["detail"]["code"] == "duplicate-row"
    response = client.post("/api/v1/estimate", json={"records": [], "config": {}})
    assert response.status_code == 422


def test_cv(records):
    config = {"candidates": [20.0, 40.0], "delta0": 100.0, "criterion": "cv1", "domain_length": 2000.0}
    response = client.post("/api/v1/cv", json={"records": records, "config": config})
    assert response.status_code == 200
    body = response.json()
    assert body["criterion"] == "cv1"
    assert [s["h"] for s in body["scores"]] == [20.0, 40.0]
    assert body["best"]["h"] in (20.0, 40.0)


def test_bootstrap(records):
    config = {
        "bandwidth": 40.0, "delta_max": 100.0, "delta_points": 6, "seed": 3,
        "replicates": 2, "block_length": 900.0, "domain_length": 2000.0,
    }
    first = client.post("/api/v1/bootstrap", json={"records": records, "config": config}).json()
    second = client.post("/api/v1/bootstrap", json={"records": records, "config": config}).json()
    assert first == second
    assert len(first["sd"]) == 6
    assert len(first["replicates"]) == 2


def test_adjust():
    lags = np.arange(0.0, 501.0, 10.0)
    body = {"delta": lags.tolist(), "rho": np.exp(-lags / 80.0).tolist(), "config": {"taper": {"kind": "w1", "d": 400.0}}}
    response = client.post("/api/v1/adjust", json=body)
    assert response.status_code == 200
    result = response.json()
    assert len(result["rho_adjusted"]) == lags.size
    assert result["rho_adjusted_normalized"][0] == 1.0
    bad = dict(body, config={"taper": {"kind": "w1", "d": 600.0}})
    response = client.post("/api/v1/adjust", json=bad)
    assert response.status_code == 422
    assert response.json()["detail"]["code"] == "taper-exceeds-grid"


def test_matern_fit():
    lags = np.linspace(0.0, 600.0, 61)
    body = {"delta": lags.tolist(), "rho": matern(lags, 75.0, 1.5).tolist()}
    result = client.post("/api/v1/matern-fit", json=body).json()
    assert result["phi"] == pytest.approx(75.0, rel=1e-2)
    assert result["kappa"] == pytest.approx(1.5, rel=1e-2)
    mismatched = client.post("/api/v1/matern-fit", json={"delta": [0.0, 1.0, 2.0], "rho": [1.0, 0.5]})
    assert mismatched.status_code == 422


def test_simulate_requires_a_scenario():
    response = client.post("/api/v1/simulate", json={"seed": 1})
    assert response.status_code == 422
    assert response.json()["detail"]["code"] == "config"
    response = client.post("/api/v1/simulate", json={"seed": 1, "preset": "unknown"})
    assert response.status_code == 422


def test_spectral_density_of_an_exponential_model():
    body = {"correlation": {"kind": "matern", "phi": 1.0, "kappa": 0.5}, "delta_step": 0.01, "delta_max": 40.0}
    result = client.post("/api/v1/spectral-density", json=body).json()
    theta = np.array(result["theta"])
    spectrum = np.array(result["spectrum"])
    assert theta[-1] == pytest.approx(np.pi / 0.01)
    band = theta <= 5.0
    assert np.max(np.abs(spectrum[band] - 2.0 / (1.0 + theta[band] ** 2))) < 1e-4

    coarse = client.post("/api/v1/spectral-density", json={**body, "theta_step": 0.5, "theta_max": 5.0}).json()
    assert len(coarse["theta"]) == 11

    aliased = client.post("/api/v1/spectral-density", json={**body, "theta_max": 1000.0})
    assert aliased.status_code == 422
    assert aliased.json()["detail"]["code"] == "validation"
