import logging
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from app.core.exceptions import SceneClassifierError
from app.models.scene_classifier import SceneClassifier
from app.schemas import ClipShape, ScenePretrainConfig
from app.services.checkpoints import module_device, runtime_device

logger = logging.getLogger(__name__)

Images = Union[np.ndarray, torch.Tensor]


class SceneLabelerService:
    def _split(self, n: int, holdout_fraction: float, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
        order = torch.randperm(n, generator=generator)
        n_holdout = max(1, int(round(n * holdout_fraction)))
        return order[n_holdout:], order[:n_holdout]

    @torch.no_grad()
    def accuracy(self, classifier: SceneClassifier, images: torch.Tensor, scenes: torch.Tensor, batch_size: int = 256) -> float:
        was_training = classifier.training
        classifier.eval()
        device = module_device(classifier)
        correct = 0
        for start in range(0, images.shape[0], batch_size):
            logits = classifier(images[start : start + batch_size].to(device))
            correct += (logits.argmax(dim=-1).cpu() == scenes[start : start + batch_size].cpu()).sum().item()
        classifier.train(was_training)
        return correct / images.shape[0]

    def pretrain_scene_classifier(
        self,
        images: Images,
        scenes: Images,
        clip: ClipShape,
        num_scenes: int,
        config: ScenePretrainConfig = ScenePretrainConfig(),
    ) -> Tuple[SceneClassifier, float]:
        """Train on background-only images, check held-out accuracy, then freeze.

        Returns the frozen classifier and its held-out accuracy.
        """
        images = torch.as_tensor(images, dtype=torch.float32)
        scenes = torch.as_tensor(scenes, dtype=torch.long)
        if images.shape[0] != scenes.shape[0]:
            raise ValueError(f"{images.shape[0]} images but {scenes.shape[0]} labels")

        torch.manual_seed(config.seed)
        generator = torch.Generator().manual_seed(config.seed)
        train_idx, holdout_idx = self._split(images.shape[0], config.holdout_fraction, generator)

        device = runtime_device()
        classifier = SceneClassifier(config.encoder, clip, num_scenes).to(device)
        optimizer = torch.optim.AdamW(classifier.parameters(), lr=config.lr)
        classifier.train()
        for epoch in range(config.epochs):
            order = train_idx[torch.randperm(train_idx.numel(), generator=generator)]
            running = 0.0
            for start in range(0, order.numel(), config.batch_size):
                batch = order[start : start + config.batch_size]
                loss = F.cross_entropy(classifier(images[batch].to(device)), scenes[batch].to(device))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                running += loss.item() * batch.numel()
            logger.info(f"Scene pretraining epoch {epoch}: loss {running / order.numel():.4f}")

        accuracy = self.accuracy(classifier, images[holdout_idx], scenes[holdout_idx])
        logger.info(f"Scene classifier held-out accuracy {accuracy:.4f} on {holdout_idx.numel()} images")
        if accuracy < config.min_accuracy:
            raise SceneClassifierError(accuracy, config.min_accuracy)
        return classifier.freeze(), accuracy

    @torch.no_grad()
    def soft_label(
        self,
        video: torch.Tensor,
        classifier: SceneClassifier,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """Scene distribution from one uniformly chosen frame of each clip (B x S)."""
        single = video.dim() == 4
        if single:
            video = video.unsqueeze(0)
        B, T = video.shape[:2]
        frame_index = torch.randint(T, (B,), generator=generator).to(video.device)
        frames = video[torch.arange(B, device=video.device), frame_index]
        probs = F.softmax(classifier(frames.to(module_device(classifier))), dim=-1).to(video.device)
        return probs[0] if single else probs


scene_labeler_service = SceneLabelerService()
