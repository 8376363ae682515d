import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Type, get_args

from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings

from app.core.exceptions import ArtifactNotFoundError, ConfigError
from app.schemas import ExperimentConfig


class Settings(BaseSettings):
    # App
    APP_NAME: str = "Static Debias Bench"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Artifacts
    OUTPUT_ROOT: str = "runs"
    DATA_ROOT: str = "data"

    # Compute
    MAX_WORKERS: int = 4
    TORCH_NUM_THREADS: int = 1
    DEVICE: str = "cpu"

    class Config:
        env_file = ".env"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()


def _model_class(annotation) -> Optional[Type[BaseModel]]:
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return annotation
    for arg in get_args(annotation):
        found = _model_class(arg)
        if found is not None:
            return found
    return None


def parse_override(item: str) -> Tuple[str, Any]:
    """Split `dotted.key=value`; the value is a JSON literal, or a plain string when it does not parse."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(document: Dict[str, Any], key: str, value: Any, model: Type[BaseModel]) -> None:
    parts = key.split(".")
    node, cls = document, model
    for i, part in enumerate(parts):
        if cls is None or part not in cls.model_fields:
            raise ConfigError(f"unknown config key: {key}")
        if i == len(parts) - 1:
            node[part] = value
            return
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
        cls = _model_class(cls.model_fields[part].annotation)


def load_experiment_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    document: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ArtifactNotFoundError(path, "config file")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed config: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError(f"{path}: config must be a JSON object")

    for item in overrides:
        key, value = parse_override(item)
        apply_override(document, key, value, ExperimentConfig)

    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from e
