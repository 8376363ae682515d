import csv
import io

import pytest
from httpx import ASGITransport, AsyncClient

from app.api.runs import get_runs_root
from app.main import app


@pytest.fixture
def runs_root(trained_runs):
    root, _ = trained_runs
    app.dependency_overrides[get_runs_root] = lambda: root
    yield root
    app.dependency_overrides.clear()


@pytest.fixture
async def client(runs_root):
    async with AsyncClient(transport=ASGITransport(app=app), base_url="http://test") as c:
        yield c


class TestRunBrowser:
    """Read-only run endpoints."""

    async def test_health(self, client):
        response = await client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"status": "healthy"}

    async def test_list_runs(self, client):
        response = await client.get("/api/runs")
        assert response.status_code == 200
        assert [r["run_id"] for r in response.json()] == ["baseline", "extractor"]

    async def test_run_summary(self, client, trained_runs):
        _, runs = trained_runs
        response = await client.get("/api/runs/extractor")
        assert response.status_code == 200
        body = response.json()
        assert body["name"] == "extractor"
        assert body["epochs_completed"] == 2
        assert body["steps_logged"] == 4
        assert body["latest_metrics"]["top1"] == runs["extractor"].final_report.top1

    async def test_metrics_history(self, client):
        response = await client.get("/api/runs/baseline/metrics")
        assert [m["epoch"] for m in response.json()] == [0, 1]

    async def test_log_filtering(self, client):
        response = await client.get("/api/runs/extractor/log", params={"kind": "step", "limit": 2, "offset": 1})
        entries = response.json()
        assert [e["step"] for e in entries] == [1, 2]
        assert all(e["breakdown"]["transform"] in ("shuffle", "duplicate_single") for e in entries)

    async def test_records(self, client):
        response = await client.get("/api/runs/baseline/records")
        assert response.status_code == 200
        assert len(response.json()) == 8

    async def test_export_csv(self, client):
        response = await client.get("/api/runs/extractor/export")
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("text/csv")
        rows = list(csv.reader(io.StringIO(response.text)))
        assert rows[0][:3] == ["epoch", "top1", "bor"]
        assert len(rows) == 3

    async def test_unknown_run_is_404(self, client):
        response = await client.get("/api/runs/nope")
        assert response.status_code == 404

    async def test_invalid_kind_is_422(self, client):
        response = await client.get("/api/runs/baseline/log", params={"kind": "bogus"})
        assert response.status_code == 422
