import hashlib
import logging
from pathlib import Path
from typing import Tuple

import torch
import torch.nn as nn

from app.core.config import settings
from app.core.exceptions import ArtifactNotFoundError, ConfigError
from app.models.scene_classifier import SceneClassifier
from app.models.streams import TwoStreamModel
from app.schemas import ClipShape, EncoderConfig, ExperimentConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def parameter_fingerprint(module: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, keyed by name."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def runtime_device() -> torch.device:
    """The torch device named by the DEVICE setting."""
    try:
        return torch.device(settings.DEVICE)
    except RuntimeError as e:
        raise ConfigError(f"invalid DEVICE setting {settings.DEVICE!r}: {e}") from e


def module_device(module: nn.Module) -> torch.device:
    return next(module.parameters()).device


def build_model(config: ExperimentConfig) -> TwoStreamModel:
    bias = config.dataset.bias
    return TwoStreamModel(config.model, config.dataset.clip, bias.num_actions, bias.num_scenes)


class CheckpointService:
    """Single-file archives: parameters by hierarchical name, the config record and the epoch."""

    def _load(self, path: Path, what: str) -> dict:
        path = Path(path)
        if not path.is_file():
            raise ArtifactNotFoundError(path, what)
        payload = torch.load(path, map_location="cpu", weights_only=True)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint format {payload.get('format_version')}")
        return payload

    def save_checkpoint(self, path: Path, model: TwoStreamModel, config: ExperimentConfig, epoch: int) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format_version": FORMAT_VERSION,
                "state_dict": model.state_dict(),
                "config": config.model_dump_json(),
                "epoch": epoch,
            },
            path,
        )
        logger.info(f"Saved checkpoint for epoch {epoch} to {path}")
        return path

    def load_checkpoint(self, path: Path) -> Tuple[TwoStreamModel, ExperimentConfig, int]:
        payload = self._load(path, "checkpoint")
        config = ExperimentConfig.model_validate_json(payload["config"])
        model = build_model(config)
        model.load_state_dict(payload["state_dict"])
        model.to(runtime_device()).eval()
        return model, config, int(payload["epoch"])

    def save_scene_classifier(self, path: Path, classifier: SceneClassifier, accuracy: float) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format_version": FORMAT_VERSION,
                "state_dict": classifier.state_dict(),
                "encoder": classifier.encoder_config.model_dump_json(),
                "clip": classifier.clip.model_dump_json(),
                "num_scenes": classifier.num_scenes,
                "accuracy": accuracy,
            },
            path,
        )
        logger.info(f"Saved scene classifier (held-out accuracy {accuracy:.4f}) to {path}")
        return path

    def load_scene_classifier(self, path: Path) -> SceneClassifier:
        payload = self._load(path, "scene classifier checkpoint")
        classifier = SceneClassifier(
            EncoderConfig.model_validate_json(payload["encoder"]),
            ClipShape.model_validate_json(payload["clip"]),
            int(payload["num_scenes"]),
        )
        classifier.load_state_dict(payload["state_dict"])
        return classifier.to(runtime_device()).freeze()


checkpoint_service = CheckpointService()
