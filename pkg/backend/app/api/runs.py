import csv
from io import StringIO
from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException, Query
from fastapi.responses import StreamingResponse

from app.core.config import settings
from app.core.exceptions import ArtifactNotFoundError
from app.schemas import MetricsReport, PredictionRecord, RunLogEntry, RunLogKind, RunSummary
from app.services.bias_metrics import bias_metrics_service
from app.services.evaluator import PREDICTIONS_NAME
from app.services.run_log import RUN_LOG_NAME, run_log_service

router = APIRouter(prefix="/runs", tags=["runs"])


def get_runs_root() -> Path:
    return Path(settings.OUTPUT_ROOT)


def resolve_run(run_id: str, root: Path = Depends(get_runs_root)) -> Path:
    """Run directory for `run_id`; only direct children of the runs root holding a run log."""
    root = root.resolve()
    run_dir = (root / run_id).resolve()
    if run_dir.parent != root or not (run_dir / RUN_LOG_NAME).is_file():
        raise HTTPException(status_code=404, detail="Run not found")
    return run_dir


@router.get("", response_model=List[RunSummary])
async def list_runs(root: Path = Depends(get_runs_root)):
    """Every run under the runs root, by directory name."""
    if not root.is_dir():
        return []
    return [
        run_log_service.summarize(d)
        for d in sorted(root.iterdir())
        if (d / RUN_LOG_NAME).is_file()
    ]


@router.get("/{run_id}", response_model=RunSummary)
async def get_run(run_dir: Path = Depends(resolve_run)):
    return run_log_service.summarize(run_dir)


@router.get("/{run_id}/metrics", response_model=List[MetricsReport])
async def get_metrics(run_dir: Path = Depends(resolve_run)):
    """Evaluation reports in the order they were logged."""
    return run_log_service.replay_reports(run_log_service.read(run_dir, kind=RunLogKind.EVAL))


@router.get("/{run_id}/log", response_model=List[RunLogEntry])
async def get_log(
    run_dir: Path = Depends(resolve_run),
    kind: Optional[RunLogKind] = Query(None),
    limit: int = Query(100, ge=1, le=1000),
    offset: int = Query(0, ge=0),
):
    return run_log_service.read(run_dir, kind=kind, limit=limit, offset=offset)


@router.get("/{run_id}/records", response_model=List[PredictionRecord])
async def get_records(run_dir: Path = Depends(resolve_run)):
    try:
        return bias_metrics_service.load_records(run_dir / PREDICTIONS_NAME)
    except ArtifactNotFoundError:
        raise HTTPException(status_code=404, detail="Run has no prediction records")


@router.get("/{run_id}/export")
async def export_metrics_csv(run_dir: Path = Depends(resolve_run)):
    """Export the evaluation history as CSV."""
    reports = run_log_service.replay_reports(run_log_service.read(run_dir, kind=RunLogKind.EVAL))

    output = StringIO()
    writer = csv.writer(output)
    writer.writerow(["epoch", "top1", "bor", "hor", "shacc", "sberr", "inter_stream_hsic", "num_videos"])
    for report in reports:
        writer.writerow([
            report.epoch if report.epoch is not None else "",
            report.top1,
            report.bor if report.bor is not None else "",
            report.hor if report.hor is not None else "",
            report.shacc,
            report.sberr,
            report.inter_stream_hsic if report.inter_stream_hsic is not None else "",
            report.num_videos,
        ])

    output.seek(0)
    return StreamingResponse(
        iter([output.getvalue()]),
        media_type="text/csv",
        headers={"Content-Disposition": f"attachment; filename=metrics_{run_dir.name}.csv"},
    )
