import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from app.core.config import settings
from app.models.scene_classifier import SceneClassifier
from app.models.streams import TwoStreamModel, choose_transform
from app.schemas import ExperimentConfig, LossBreakdown, MetricsReport
from app.services.checkpoints import build_model, checkpoint_service, runtime_device
from app.services.dataset_store import dataset_store
from app.services.evaluator import clips_to_tensor, evaluator_service, labels_to_tensor
from app.services.losses import compute_losses
from app.services.run_log import RUN_LOG_NAME, RunLogWriter
from app.services.scene_labeler import scene_labeler_service
from app.services.synth_data import SyntheticVideo

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.json"


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint_path: Path
    model: TwoStreamModel
    reports: List[MetricsReport] = field(default_factory=list)

    @property
    def final_report(self) -> Optional[MetricsReport]:
        return self.reports[-1] if self.reports else None


class TrainerService:
    def _scene_classifier(self, config: ExperimentConfig, classifier: Optional[SceneClassifier]) -> Optional[SceneClassifier]:
        if not config.model.scene_prediction:
            return None
        if classifier is None:
            classifier = checkpoint_service.load_scene_classifier(Path(config.model.scene_classifier_path))
        if not classifier.frozen:
            classifier = classifier.freeze()
        return classifier

    def _log_epoch(self, epoch: int, breakdowns: List[LossBreakdown]) -> None:
        sums = defaultdict(float)
        for b in breakdowns:
            for key in ("total", "ce_u", "ce_b", "scene_u", "scene_b", "ind"):
                sums[key] += getattr(b, key)
        n = max(len(breakdowns), 1)
        means = " ".join(f"{key}={value / n:.4f}" for key, value in sums.items())
        beta_t = breakdowns[-1].beta_t if breakdowns else 0.0
        logger.info(f"Epoch {epoch}: {means} beta_t={beta_t}")

    def train(
        self,
        config: ExperimentConfig,
        train_videos: Optional[Sequence[SyntheticVideo]] = None,
        val_videos: Optional[Sequence[SyntheticVideo]] = None,
        scene_classifier: Optional[SceneClassifier] = None,
    ) -> TrainResult:
        """Run the epoch loop for `config`, checkpointing and evaluating every eval_every epochs."""
        run_dir = Path(config.output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / CONFIG_NAME).write_text(config.model_dump_json(indent=2))

        scene_classifier = self._scene_classifier(config, scene_classifier)
        if train_videos is None or val_videos is None:
            train_videos, val_videos = dataset_store.load_or_generate(config.dataset)
        if len(train_videos) < config.batch_size:
            raise ValueError(f"{len(train_videos)} training videos do not fill a batch of {config.batch_size}")

        torch.set_num_threads(settings.TORCH_NUM_THREADS)
        torch.manual_seed(config.seed)
        order_gen = torch.Generator().manual_seed(config.seed)
        transform_gen = torch.Generator().manual_seed(config.seed + 1)
        label_gen = torch.Generator().manual_seed(config.seed + 2)

        device = runtime_device()
        model = build_model(config).to(device)
        if scene_classifier is not None:
            scene_classifier = scene_classifier.to(device)
        optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=config.optimizer.lr,
            betas=(config.optimizer.beta1, config.optimizer.beta2),
            weight_decay=config.optimizer.weight_decay,
        )

        clips = clips_to_tensor(train_videos)
        labels = labels_to_tensor(train_videos)
        n_batches = clips.shape[0] // config.batch_size

        writer = RunLogWriter(run_dir / RUN_LOG_NAME, config)
        writer.log_start(config)
        logger.info(
            f"Training {config.name} ({writer.config_hash}): {config.model.biased_stream_kind.value} biased stream, "
            f"scene_prediction={config.model.scene_prediction}, {len(train_videos)} clips, {config.epochs} epochs"
        )

        result = TrainResult(run_dir=run_dir, checkpoint_path=run_dir, model=model)
        step = 0
        for epoch in range(config.epochs):
            model.train()
            order = torch.randperm(clips.shape[0], generator=order_gen)
            breakdowns = []
            for b in range(n_batches):
                index = order[b * config.batch_size : (b + 1) * config.batch_size]
                video, y = clips[index].to(device), labels[index].to(device)

                transform = choose_transform(transform_gen) if model.has_biased_stream else None
                out_u = model.forward_unbiased(video)
                out_b = model.forward_biased(video, transform, transform_gen) if transform is not None else None
                y_s = (
                    scene_labeler_service.soft_label(video, scene_classifier, label_gen)
                    if scene_classifier is not None
                    else None
                )

                loss, breakdown = compute_losses(out_u, out_b, y, y_s, epoch, step, config.loss, transform)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

                writer.log_step(breakdown)
                breakdowns.append(breakdown)
                step += 1
            self._log_epoch(epoch, breakdowns)

            if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
                result.checkpoint_path = checkpoint_service.save_checkpoint(
                    run_dir / f"checkpoint_epoch{epoch:03d}.pt", model, config, epoch
                )
                writer.log_checkpoint(result.checkpoint_path, epoch)
                report, _ = evaluator_service.evaluate(model, val_videos, config, epoch=epoch, output_dir=run_dir)
                writer.log_eval(report)
                result.reports.append(report)

        writer.log_end(config.epochs - 1)
        return result


trainer_service = TrainerService()
