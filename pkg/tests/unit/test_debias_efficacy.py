"""Full-scale comparison of the debiased model against the single-stream baseline.

Deselected by default; run with `pytest -m slow`.
"""
from pathlib import Path
from statistics import mean

import pytest

from app.core.config import load_experiment_config
from app.services.scene_labeler import scene_labeler_service
from app.services.synth_data import synth_data_service
from app.services.trainer import trainer_service

CONFIGS = Path(__file__).resolve().parents[2] / "configs"
SEEDS = (0, 1, 2)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("efficacy")


@pytest.fixture(scope="module")
def scene_classifier(workspace):
    config = load_experiment_config(CONFIGS / "extractor_scene.json")
    pretrain = config.scene_pretrain
    images, scenes = synth_data_service.scene_plates(pretrain.num_images, config.dataset, pretrain.seed)
    classifier, _ = scene_labeler_service.pretrain_scene_classifier(
        images, scenes, config.dataset.clip, config.dataset.bias.num_scenes, pretrain
    )
    return classifier


def train(workspace, name, seed, scene_classifier=None):
    config = load_experiment_config(
        CONFIGS / f"{name}.json",
        [
            f"seed={seed}",
            f"output_dir={workspace / f'{name}_{seed}'}",
            f"dataset.data_dir={workspace / 'data'}",
        ],
    )
    return trainer_service.train(config, scene_classifier=scene_classifier).final_report


class TestDebiasEfficacy:
    """The extractor-based stream with scene prediction lowers background reliance."""

    def test_full_method_beats_baseline(self, workspace, scene_classifier):
        baseline = [train(workspace, "baseline", seed) for seed in SEEDS]
        full = [train(workspace, "extractor_scene", seed, scene_classifier) for seed in SEEDS]

        assert mean(r.bor for r in baseline) >= 0.5
        assert sum(f.bor < b.bor for f, b in zip(full, baseline)) >= 2
        assert mean(r.top1 for r in full) >= mean(r.top1 for r in baseline) - 0.1
