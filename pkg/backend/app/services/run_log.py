import hashlib
import json
import logging
import threading
import time
from pathlib import Path
from typing import List, Optional

from app.core.exceptions import ArtifactNotFoundError
from app.schemas import ExperimentConfig, LossBreakdown, MetricsReport, RunLogEntry, RunLogKind, RunSummary

logger = logging.getLogger(__name__)

RUN_LOG_NAME = "run_log.jsonl"


def config_hash(config: ExperimentConfig) -> str:
    """Git-style short hash of the experiment definition; the output location is not part of it."""
    canonical = json.dumps(config.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode()).hexdigest()[:12]


class RunLogWriter:
    """Append-only JSON-lines log of one run. Appends are serialised through a lock."""

    def __init__(self, path: Path, config: ExperimentConfig):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash(config)
        if self.path.exists():
            logger.warning(f"Starting a fresh run log over {self.path}")
            self.path.unlink()
        self._lock = threading.Lock()
        self._started = time.perf_counter()

    def append(self, kind: RunLogKind, **fields) -> RunLogEntry:
        entry = RunLogEntry(
            kind=kind,
            config_hash=self.config_hash,
            wall_time=time.perf_counter() - self._started,
            **fields,
        )
        line = entry.model_dump_json() + "\n"
        with self._lock:
            with self.path.open("a") as handle:
                handle.write(line)
        return entry

    def log_start(self, config: ExperimentConfig) -> RunLogEntry:
        return self.append(RunLogKind.RUN_START, message=config.name)

    def log_step(self, breakdown: LossBreakdown) -> RunLogEntry:
        return self.append(RunLogKind.STEP, epoch=breakdown.epoch, step=breakdown.step, breakdown=breakdown)

    def log_eval(self, report: MetricsReport) -> RunLogEntry:
        return self.append(RunLogKind.EVAL, epoch=report.epoch, metrics=report)

    def log_checkpoint(self, path: Path, epoch: int) -> RunLogEntry:
        return self.append(RunLogKind.CHECKPOINT, epoch=epoch, checkpoint=Path(path).name)

    def log_end(self, epoch: int) -> RunLogEntry:
        return self.append(RunLogKind.RUN_END, epoch=epoch)


class RunLogService:
    def read(
        self,
        path: Path,
        kind: Optional[RunLogKind] = None,
        limit: Optional[int] = None,
        offset: int = 0,
    ) -> List[RunLogEntry]:
        path = Path(path)
        if path.is_dir():
            path = path / RUN_LOG_NAME
        if not path.is_file():
            raise ArtifactNotFoundError(path, "run log")

        entries = [RunLogEntry.model_validate_json(line) for line in path.read_text().splitlines() if line.strip()]
        if kind is not None:
            entries = [e for e in entries if e.kind == kind]
        entries = entries[offset:]
        return entries if limit is None else entries[:limit]

    def replay_reports(self, entries: List[RunLogEntry]) -> List[MetricsReport]:
        return [e.metrics for e in entries if e.kind == RunLogKind.EVAL and e.metrics is not None]

    def summarize(self, run_dir: Path) -> RunSummary:
        run_dir = Path(run_dir)
        entries = self.read(run_dir)
        steps = [e for e in entries if e.kind == RunLogKind.STEP]
        starts = [e for e in entries if e.kind == RunLogKind.RUN_START]
        reports = self.replay_reports(entries)
        return RunSummary(
            run_id=run_dir.name,
            name=starts[0].message if starts and starts[0].message else run_dir.name,
            config_hash=entries[0].config_hash if entries else None,
            epochs_completed=max((e.epoch for e in steps), default=-1) + 1,
            steps_logged=len(steps),
            latest_metrics=reports[-1] if reports else None,
        )

    def comparable(self, entries: List[RunLogEntry]) -> List[dict]:
        """Entries without wall-clock time, for comparing two runs of one config."""
        return [e.model_dump(mode="json", exclude={"wall_time"}) for e in entries]


run_log_service = RunLogService()
