import logging
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from app.core.exceptions import ConfigError
from app.models.streams import TwoStreamModel
from app.schemas import ExperimentConfig, MetricsReport, PredictionRecord, Split
from app.services.bias_metrics import bias_metrics_service
from app.services.checkpoints import checkpoint_service, module_device
from app.services.dataset_store import dataset_store
from app.services.synth_data import SyntheticVideo, synth_data_service

logger = logging.getLogger(__name__)

PREDICTIONS_NAME = "predictions.jsonl"
METRICS_NAME = "metrics.json"
PREDICT_BATCH = 256


def clips_to_tensor(videos: Sequence[SyntheticVideo]) -> torch.Tensor:
    return torch.from_numpy(np.stack([v.frames for v in videos]).astype(np.float32))


def labels_to_tensor(videos: Sequence[SyntheticVideo]) -> torch.Tensor:
    return torch.tensor([v.action for v in videos], dtype=torch.long)


def iter_batches(clips: torch.Tensor, batch_size: int) -> Iterator[torch.Tensor]:
    for start in range(0, clips.shape[0], batch_size):
        yield clips[start : start + batch_size]


class EvaluatorService:
    @torch.no_grad()
    def predict(self, model: TwoStreamModel, videos: Sequence[SyntheticVideo]) -> List[int]:
        """Action predicted by the unbiased stream for every clip."""
        was_training = model.training
        model.eval()
        device = module_device(model)
        preds: List[int] = []
        for batch in iter_batches(clips_to_tensor(videos), PREDICT_BATCH):
            preds.extend(model.forward_unbiased(batch.to(device)).action_logits.argmax(dim=-1).tolist())
        model.train(was_training)
        return preds

    def build_records(self, model: TwoStreamModel, videos: Sequence[SyntheticVideo], seed: int) -> List[PredictionRecord]:
        rng = np.random.default_rng(seed)
        variants = [synth_data_service.build_variants(v, synth_data_service.pick_donor(videos, v, rng)) for v in videos]

        pred_original = self.predict(model, [vs.original for vs in variants])
        pred_bg_only = self.predict(model, [vs.background_only for vs in variants])
        pred_human_only = self.predict(model, [vs.human_only for vs in variants])
        pred_bg_swapped = self.predict(model, [vs.background_swapped for vs in variants])

        return [
            PredictionRecord(
                video_id=vs.original.video_id,
                true_action=vs.original.action,
                pred_original=pred_original[i],
                pred_bg_only=pred_bg_only[i],
                pred_human_only=pred_human_only[i],
                pred_bg_swapped=pred_bg_swapped[i],
                swap_source_action=vs.swap_source_action,
            )
            for i, vs in enumerate(variants)
        ]

    def evaluate(
        self,
        model: TwoStreamModel,
        videos: Sequence[SyntheticVideo],
        config: ExperimentConfig,
        epoch: Optional[int] = None,
        output_dir: Optional[Path] = None,
    ) -> Tuple[MetricsReport, List[PredictionRecord]]:
        expected = config.dataset.clip.as_tuple()
        for v in videos:
            if v.clip_shape != expected:
                raise ValueError(f"video {v.video_id} has shape {v.clip_shape}, checkpoint expects {expected}")

        records = self.build_records(model, videos, config.seed)
        generator = torch.Generator().manual_seed(config.seed)
        hsic = bias_metrics_service.inter_stream_hsic(
            model,
            iter_batches(clips_to_tensor(videos), config.batch_size),
            config.loss.kernel,
            generator,
        )
        report = bias_metrics_service.build_report(records, hsic, epoch)
        logger.info(
            f"Evaluation (epoch {epoch}): top1={report.top1:.3f} bor={report.bor} hor={report.hor} "
            f"shacc={report.shacc:.3f} sberr={report.sberr:.3f} hsic={report.inter_stream_hsic}"
        )

        if output_dir is not None:
            output_dir = Path(output_dir)
            bias_metrics_service.save_records(output_dir / PREDICTIONS_NAME, records)
            (output_dir / METRICS_NAME).write_text(report.model_dump_json(indent=2))
        return report, records

    def evaluate_checkpoint(
        self,
        checkpoint_path: Path,
        videos: Optional[Sequence[SyntheticVideo]] = None,
        output_dir: Optional[Path] = None,
    ) -> MetricsReport:
        model, config, epoch = checkpoint_service.load_checkpoint(checkpoint_path)
        if videos is None:
            videos = dataset_store.load_split(config.dataset, Split.VAL)
        if not videos:
            raise ConfigError("evaluation split is empty")
        report, _ = self.evaluate(model, videos, config, epoch=epoch, output_dir=output_dir)
        return report

    def report_from_records(self, run_dir: Path, inter_stream_hsic: Optional[float] = None) -> MetricsReport:
        """Recompute metrics from the persisted prediction records of a run."""
        records = bias_metrics_service.load_records(Path(run_dir) / PREDICTIONS_NAME)
        return bias_metrics_service.build_report(records, inter_stream_hsic)


evaluator_service = EvaluatorService()
