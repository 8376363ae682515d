import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import torch

from app.core.exceptions import ArtifactNotFoundError, DatasetError, MetricUndefinedError
from app.models.streams import TwoStreamModel, choose_transform
from app.schemas import KernelSpec, MetricsReport, PredictionRecord
from app.services.checkpoints import module_device
from app.services.hsic import hsic_biased

logger = logging.getLogger(__name__)


class BiasMetricsService:
    """top-1, BOR, HOR, SHAcc, SBErr and inter-stream HSIC over one evaluation split."""

    def _require(self, records: Sequence[PredictionRecord]) -> None:
        if not records:
            raise MetricUndefinedError("no prediction records to score")

    def _accuracy(self, records: Sequence[PredictionRecord], field: str) -> float:
        self._require(records)
        correct = sum(1 for r in records if getattr(r, field) == r.true_action)
        return correct / len(records)

    def top1(self, records: Sequence[PredictionRecord]) -> float:
        return self._accuracy(records, "pred_original")

    def _ratio(self, records: Sequence[PredictionRecord], field: str) -> Optional[float]:
        original = self.top1(records)
        if original == 0:
            logger.warning(f"original accuracy is zero; {field} ratio is undefined")
            return None
        return self._accuracy(records, field) / original

    def bor(self, records: Sequence[PredictionRecord]) -> Optional[float]:
        """Background-only accuracy over original accuracy; None when the latter is zero."""
        return self._ratio(records, "pred_bg_only")

    def hor(self, records: Sequence[PredictionRecord]) -> Optional[float]:
        return self._ratio(records, "pred_human_only")

    def shacc(self, records: Sequence[PredictionRecord]) -> float:
        return self._accuracy(records, "pred_bg_swapped")

    def sberr(self, records: Sequence[PredictionRecord]) -> float:
        """Share of wrong swapped-background predictions that name the donor's action (0 if none are wrong)."""
        self._require(records)
        wrong = [r for r in records if r.pred_bg_swapped != r.true_action]
        if not wrong:
            return 0.0
        return sum(1 for r in wrong if r.pred_bg_swapped == r.swap_source_action) / len(wrong)

    @torch.no_grad()
    def collect_stream_features(
        self,
        model: TwoStreamModel,
        batches: Iterable[torch.Tensor],
        generator: Optional[torch.Generator] = None,
    ) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        """(f_b, f_u) per batch; the biased stream sees the shuffle/duplicate alternation."""
        was_training = model.training
        model.eval()
        device = module_device(model)
        pairs = []
        for video in batches:
            video = video.to(device)
            if video.shape[0] < 2:
                logger.warning(f"skipping an evaluation batch of size {video.shape[0]} for HSIC")
                continue
            f_u = model.forward_unbiased(video).feature
            f_b = model.forward_biased(video, choose_transform(generator), generator).feature
            pairs.append((f_b, f_u))
        model.train(was_training)
        return pairs

    def mean_hsic(self, pairs: Sequence[Tuple[torch.Tensor, torch.Tensor]], kernel: KernelSpec = KernelSpec()) -> float:
        if not pairs:
            raise MetricUndefinedError("no feature batches for inter-stream HSIC")
        values = [hsic_biased(f_b.double(), f_u.double(), kernel, kernel).item() for f_b, f_u in pairs]
        return sum(values) / len(values)

    def inter_stream_hsic(
        self,
        model: TwoStreamModel,
        batches: Iterable[torch.Tensor],
        kernel: KernelSpec = KernelSpec(),
        generator: Optional[torch.Generator] = None,
    ) -> Optional[float]:
        """Mean per-batch HSIC(f_b, f_u); None for a single-stream model."""
        if not model.has_biased_stream:
            return None
        return self.mean_hsic(self.collect_stream_features(model, batches, generator), kernel)

    def build_report(
        self,
        records: Sequence[PredictionRecord],
        inter_stream_hsic: Optional[float] = None,
        epoch: Optional[int] = None,
    ) -> MetricsReport:
        return MetricsReport(
            top1=self.top1(records),
            bor=self.bor(records),
            hor=self.hor(records),
            shacc=self.shacc(records),
            sberr=self.sberr(records),
            inter_stream_hsic=inter_stream_hsic,
            num_videos=len(records),
            epoch=epoch,
        )

    def save_records(self, path: Path, records: Sequence[PredictionRecord]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(r.model_dump_json() + "\n" for r in records))
        return path

    def load_records(self, path: Path) -> List[PredictionRecord]:
        path = Path(path)
        if not path.is_file():
            raise ArtifactNotFoundError(path, "prediction records")
        records = []
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(PredictionRecord.model_validate_json(line))
            except ValueError as e:
                raise DatasetError(f"{path}:{line_no}: malformed prediction record: {e}") from e
        return records


bias_metrics_service = BiasMetricsService()
