import pytest
import torch

from app.core.config import settings
from app.core.exceptions import ArtifactNotFoundError, ConfigError
from app.models.scene_classifier import SceneClassifier
from app.schemas import InputTransformMode, RunLogKind
from app.services.checkpoints import checkpoint_service, parameter_fingerprint, runtime_device
from app.services.evaluator import evaluator_service
from app.services.run_log import run_log_service
from app.services.scene_labeler import scene_labeler_service
from app.services.synth_data import synth_data_service
from app.services.trainer import CONFIG_NAME, trainer_service


def steps(run_dir):
    return [e.breakdown for e in run_log_service.read(run_dir, kind=RunLogKind.STEP)]


class TestTraining:
    """Epoch loop, schedule, logging and checkpoints."""

    def test_single_stream_is_plain_cross_entropy(self, make_config, tiny_splits):
        config = make_config(model={"biased_stream_kind": "none"})
        result = trainer_service.train(config, *tiny_splits)
        for b in steps(result.run_dir):
            assert b.total == b.ce_u == b.total_u
            assert (b.ce_b, b.ind, b.scene_u) == (0.0, 0.0, 0.0)
            assert b.transform is None
        assert result.final_report.inter_stream_hsic is None

    @pytest.mark.parametrize("t0", [0, 1])
    def test_beta_schedule_in_run_log(self, make_config, tiny_splits, t0):
        config = make_config(model={"biased_stream_kind": "extractor_based"}, loss={"t0": t0}, epochs=3)
        result = trainer_service.train(config, *tiny_splits)
        for b in steps(result.run_dir):
            assert b.beta_t == (0.1 if b.epoch >= t0 else 0.0)

    def test_transform_recorded_every_step(self, make_config, tiny_splits):
        config = make_config(model={"biased_stream_kind": "input_based"}, epochs=3)
        result = trainer_service.train(config, *tiny_splits)
        logged = steps(result.run_dir)
        assert len(logged) == 3 * (16 // 8)
        assert {b.transform for b in logged} <= {InputTransformMode.SHUFFLE, InputTransformMode.DUPLICATE_SINGLE}
        assert result.final_report.inter_stream_hsic is not None

    def test_checkpoints_and_evaluations_follow_eval_every(self, make_config, tiny_splits):
        config = make_config(model={"biased_stream_kind": "extractor_based"}, epochs=3, eval_every=2)
        result = trainer_service.train(config, *tiny_splits)
        checkpoints = run_log_service.read(result.run_dir, kind=RunLogKind.CHECKPOINT)
        assert [e.checkpoint for e in checkpoints] == ["checkpoint_epoch001.pt", "checkpoint_epoch002.pt"]
        assert [r.epoch for r in result.reports] == [1, 2]
        assert (result.run_dir / CONFIG_NAME).is_file()
        assert result.checkpoint_path.name == "checkpoint_epoch002.pt"

    def test_same_config_and_seed_reproduce(self, make_config, tiny_splits, tmp_path):
        config = make_config(model={"biased_stream_kind": "input_based"})
        first = trainer_service.train(config, *tiny_splits)
        second = trainer_service.train(config.model_copy(update={"output_dir": str(tmp_path / "again")}), *tiny_splits)
        assert run_log_service.comparable(run_log_service.read(first.run_dir)) == run_log_service.comparable(
            run_log_service.read(second.run_dir)
        )
        assert first.final_report == second.final_report

    def test_checkpoint_round_trip_evaluates_identically(self, make_config, tiny_splits):
        config = make_config(model={"biased_stream_kind": "extractor_based"})
        result = trainer_service.train(config, *tiny_splits)
        model, loaded_config, epoch = checkpoint_service.load_checkpoint(result.checkpoint_path)
        report, _ = evaluator_service.evaluate(model, tiny_splits[1], loaded_config, epoch=epoch)
        assert loaded_config == config
        assert report == result.final_report

    def test_generates_data_when_none_given(self, make_config):
        result = trainer_service.train(make_config(epochs=1))
        assert len(steps(result.run_dir)) == 2


class TestScenePrediction:
    """Runs that use the frozen scene classifier."""

    def test_missing_classifier_names_path(self, make_config, tmp_path, tiny_splits):
        config = make_config(
            model={
                "biased_stream_kind": "extractor_based",
                "scene_prediction": True,
                "scene_classifier_path": str(tmp_path / "absent.pt"),
            }
        )
        with pytest.raises(ArtifactNotFoundError) as exc:
            trainer_service.train(config, *tiny_splits)
        assert exc.value.path == tmp_path / "absent.pt"

    def test_scene_losses_logged_with_classifier(self, make_config, tmp_path, tiny_splits):
        config = make_config(
            model={
                "biased_stream_kind": "extractor_based",
                "scene_prediction": True,
                "scene_classifier_path": str(tmp_path / "scene.pt"),
            },
            scene_pretrain={"min_accuracy": 0.0},
        )
        images, scenes = synth_data_service.scene_plates(40, config.dataset, 0)
        classifier, accuracy = scene_labeler_service.pretrain_scene_classifier(
            images, scenes, config.dataset.clip, 4, config.scene_pretrain
        )
        checkpoint_service.save_scene_classifier(tmp_path / "scene.pt", classifier, accuracy)

        result = trainer_service.train(config, *tiny_splits)
        logged = steps(result.run_dir)
        assert all(b.scene_u > 0.0 and b.scene_b > 0.0 for b in logged)
        assert all(b.beta_t == 0.0 for b in logged if b.epoch == 0)
        assert all(b.beta_t == 0.1 for b in logged if b.epoch == 1)

    def test_frozen_classifier_untouched_by_training(self, make_config, tiny_splits):
        config = make_config(model={"biased_stream_kind": "extractor_based", "scene_prediction": True}, epochs=1)
        torch.manual_seed(0)
        classifier = SceneClassifier(config.scene_pretrain.encoder, config.dataset.clip, 4).freeze()
        before = parameter_fingerprint(classifier)
        trainer_service.train(config, *tiny_splits, scene_classifier=classifier)
        assert parameter_fingerprint(classifier) == before
        assert classifier.frozen


class TestScheduleAndTransforms:
    """Defaults that only show over longer runs."""

    def test_beta_switches_on_at_epoch_fifteen(self, make_config, tiny_splits):
        config = make_config(model={"biased_stream_kind": "extractor_based"}, loss={"t0": 15}, epochs=16, eval_every=16)
        result = trainer_service.train(config, *tiny_splits)
        logged = steps(result.run_dir)
        assert {b.beta_t for b in logged if b.epoch < 15} == {0.0}
        assert {b.beta_t for b in logged if b.epoch == 15} == {0.1}

    def test_shuffle_and_duplicate_split_evenly(self, make_config):
        config = make_config(
            model={"biased_stream_kind": "input_based"},
            dataset={"n_train": 400},
            batch_size=2,
            epochs=1,
        )
        result = trainer_service.train(config)
        logged = steps(result.run_dir)
        assert len(logged) == 200
        shuffled = sum(b.transform == InputTransformMode.SHUFFLE for b in logged) / len(logged)
        assert abs(shuffled - 0.5) <= 0.12


class TestDevice:
    """DEVICE setting placement."""

    def test_runtime_device_follows_setting(self):
        assert runtime_device() == torch.device(settings.DEVICE)

    def test_invalid_device_raises_config_error(self, monkeypatch):
        monkeypatch.setattr(settings, "DEVICE", "bogus")
        with pytest.raises(ConfigError):
            runtime_device()

    def test_trained_model_lives_on_runtime_device(self, make_config, tiny_splits):
        result = trainer_service.train(make_config(model={"biased_stream_kind": "input_based"}, epochs=1), *tiny_splits)
        assert {p.device for p in result.model.parameters()} == {runtime_device()}
