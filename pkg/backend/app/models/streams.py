import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from app.models.encoders import VideoEncoder
from app.schemas import BiasedStreamKind, ClipShape, InputTransformMode, ModelConfig

logger = logging.getLogger(__name__)


class GradientReversal(torch.autograd.Function):
    """Identity on the way forward, gradient times -strength on the way back."""

    @staticmethod
    def forward(ctx, x, strength):
        ctx.strength = strength
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.strength, None


def grl(x: torch.Tensor, strength: float = 1.0) -> torch.Tensor:
    if not strength > 0:
        raise ValueError(f"GRL strength must be positive, got {strength}")
    return GradientReversal.apply(x, strength)


class GradientReversalLayer(nn.Module):
    def __init__(self, strength: float = 1.0):
        super().__init__()
        self.strength = strength

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return grl(x, self.strength)


@dataclass
class StreamOutput:
    feature: torch.Tensor  # B x d
    action_logits: torch.Tensor  # B x A
    scene_logits: torch.Tensor  # B x S


def apply_input_transform(
    video: torch.Tensor,
    mode: InputTransformMode,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Per-clip frame shuffle or single-frame duplication of a B x T x ... batch."""
    if mode == InputTransformMode.IDENTITY:
        return video
    B, T = video.shape[:2]
    if mode == InputTransformMode.SHUFFLE:
        index = torch.stack([torch.randperm(T, generator=generator) for _ in range(B)])
    elif mode == InputTransformMode.DUPLICATE_SINGLE:
        index = torch.randint(T, (B, 1), generator=generator).expand(B, T)
    else:
        raise ValueError(f"unknown input transform: {mode}")
    return video[torch.arange(B).unsqueeze(1), index.to(video.device)]


def choose_transform(generator: Optional[torch.Generator] = None) -> InputTransformMode:
    """Fair coin between shuffle and duplicate, drawn once per batch."""
    if torch.rand(1, generator=generator).item() < 0.5:
        return InputTransformMode.SHUFFLE
    return InputTransformMode.DUPLICATE_SINGLE


class TwoStreamModel(nn.Module):
    """Unbiased spatio-temporal stream, optional biased stream and a shared scene head.

    Parameter groups: unbiased_encoder (theta_u), biased_encoder (theta_b),
    unbiased_head (theta_Hu), biased_head (theta_Hb), scene_head (theta_HS,
    used by both streams).
    """

    def __init__(self, config: ModelConfig, clip: ClipShape, num_actions: int, num_scenes: int):
        super().__init__()
        self.config = config
        self.clip = clip
        self.kind = config.biased_stream_kind
        dim = config.unbiased.embed_dim

        self.unbiased_encoder = VideoEncoder(config.unbiased, clip)
        self.unbiased_head = nn.Linear(dim, num_actions)
        self.scene_head = nn.Linear(dim, num_scenes)
        self.grl = GradientReversalLayer(config.grl_strength)

        if self.kind != BiasedStreamKind.NONE:
            self.biased_encoder = VideoEncoder(config.biased, clip)
            self.biased_head = nn.Linear(dim, num_actions)
        else:
            self.biased_encoder = None
            self.biased_head = None

    @property
    def has_biased_stream(self) -> bool:
        return self.biased_encoder is not None

    def forward_unbiased(self, video: torch.Tensor) -> StreamOutput:
        f_u = self.unbiased_encoder(video)
        return StreamOutput(
            feature=f_u,
            action_logits=self.unbiased_head(f_u),
            scene_logits=self.scene_head(self.grl(f_u)),
        )

    def _biased_output(self, f_b: torch.Tensor) -> StreamOutput:
        return StreamOutput(
            feature=f_b,
            action_logits=self.biased_head(f_b),
            scene_logits=self.scene_head(f_b),
        )

    def forward_biased_extractor(self, video: torch.Tensor) -> StreamOutput:
        if self.kind != BiasedStreamKind.EXTRACTOR_BASED:
            raise ValueError(f"model has biased stream kind {self.kind.value}, not extractor_based")
        return self._biased_output(self.biased_encoder(video))

    def forward_biased_input(
        self,
        video: torch.Tensor,
        transform: InputTransformMode,
        generator: Optional[torch.Generator] = None,
    ) -> StreamOutput:
        if self.kind != BiasedStreamKind.INPUT_BASED:
            raise ValueError(f"model has biased stream kind {self.kind.value}, not input_based")
        if transform == InputTransformMode.IDENTITY and self.training:
            raise ValueError("the input-based biased stream must not see ordered frames during training")
        return self._biased_output(self.biased_encoder(apply_input_transform(video, transform, generator)))

    def forward_biased(
        self,
        video: torch.Tensor,
        transform: InputTransformMode,
        generator: Optional[torch.Generator] = None,
    ) -> StreamOutput:
        """Biased stream on a transformed clip, whichever design the model uses."""
        if self.kind == BiasedStreamKind.INPUT_BASED:
            return self.forward_biased_input(video, transform, generator)
        if self.kind == BiasedStreamKind.EXTRACTOR_BASED:
            return self.forward_biased_extractor(apply_input_transform(video, transform, generator))
        raise ValueError("model has no biased stream")

    def forward(self, video: torch.Tensor) -> StreamOutput:
        return self.forward_unbiased(video)
