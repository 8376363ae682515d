from pathlib import Path
from typing import Optional, TYPE_CHECKING

if TYPE_CHECKING:
    from app.schemas import LossBreakdown


class DebiasBenchError(Exception):
    """Base class for every error the bench raises on purpose."""


class ConfigError(DebiasBenchError):
    pass


class ArtifactNotFoundError(DebiasBenchError):
    def __init__(self, path: Path, what: str = "artifact"):
        self.path = Path(path)
        self.what = what
        super().__init__(f"{what} not found: {self.path}")


class DatasetError(DebiasBenchError):
    pass


class SceneClassifierError(DebiasBenchError):
    def __init__(self, accuracy: float, threshold: float):
        self.accuracy = accuracy
        self.threshold = threshold
        super().__init__(
            f"scene classifier held-out accuracy {accuracy:.4f} is below {threshold:.2f}; "
            "check that scene plates are distinct and increase scene_pretrain.epochs"
        )


class TrainingDivergedError(DebiasBenchError):
    def __init__(self, breakdown: "LossBreakdown", term: Optional[str] = None):
        self.breakdown = breakdown
        self.term = term
        where = f" in {term}" if term else ""
        super().__init__(
            f"non-finite loss{where} at epoch {breakdown.epoch} step {breakdown.step}: "
            f"{breakdown.model_dump_json()}"
        )


class MetricUndefinedError(DebiasBenchError):
    pass
