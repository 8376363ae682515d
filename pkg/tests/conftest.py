import copy
import json
from pathlib import Path
from typing import Any, Callable, Dict

import pytest
import torch

from app.schemas import ExperimentConfig
from app.services.synth_data import synth_data_service
from app.services.trainer import trainer_service

torch.set_num_threads(1)


def deep_merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def tiny_document(output_dir: Path) -> Dict[str, Any]:
    """4 frames of 8x8 RGB, one-block encoders with 8-dim features."""
    encoder = {"embed_dim": 8, "depth": 1, "heads": 2, "patch_size": 4, "mlp_ratio": 2.0}
    return {
        "name": "tiny",
        "seed": 0,
        "dataset": {
            "bias": {"num_actions": 4, "num_scenes": 4, "correlation": 0.9},
            "clip": {"frames": 4, "height": 8, "width": 8, "channels": 3},
            "n_train": 16,
            "n_val": 8,
            "seed": 0,
            "actor_size": 2,
            "motion_step": 1,
        },
        "model": {"unbiased": {**encoder, "temporal_mode": "spatiotemporal"}},
        "loss": {"alpha": 0.5, "beta": 0.1, "lam": 1000.0, "t0": 1},
        "optimizer": {"lr": 1e-3},
        "scene_pretrain": {
            "encoder": {**encoder, "temporal_mode": "per_frame"},
            "num_images": 40,
            "epochs": 1,
            "batch_size": 16,
        },
        "epochs": 2,
        "batch_size": 8,
        "eval_every": 1,
        "output_dir": str(output_dir),
    }


@pytest.fixture
def make_config(tmp_path) -> Callable[..., ExperimentConfig]:
    """Factory for tiny configs; keyword arguments are deep-merged into the document."""

    def factory(**updates) -> ExperimentConfig:
        document = deep_merge(tiny_document(tmp_path / "run"), updates)
        return ExperimentConfig.model_validate(document)

    return factory


@pytest.fixture
def tiny_config(make_config) -> ExperimentConfig:
    return make_config()


@pytest.fixture
def tiny_splits(tiny_config):
    return synth_data_service.generate_splits(tiny_config.dataset)


@pytest.fixture(scope="session")
def trained_runs(tmp_path_factory):
    """Two finished tiny runs (baseline and extractor-based) under one runs root."""
    root = tmp_path_factory.mktemp("runs")
    runs = {}
    for name, kind in (("baseline", "none"), ("extractor", "extractor_based")):
        document = deep_merge(
            tiny_document(root / name),
            {"name": name, "model": {"biased_stream_kind": kind}},
        )
        config = ExperimentConfig.model_validate(document)
        runs[name] = trainer_service.train(config)
    return root, runs


@pytest.fixture
def config_file(tmp_path) -> Path:
    """The tiny config written to disk, with its run directory under tmp_path."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_document(tmp_path / "run")))
    return path
