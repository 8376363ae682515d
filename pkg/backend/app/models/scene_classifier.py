import torch
import torch.nn as nn

from app.models.encoders import VideoEncoder
from app.schemas import ClipShape, EncoderConfig


class SceneClassifier(nn.Module):
    """Per-frame encoder plus a linear scene head; classifies single images."""

    def __init__(self, encoder: EncoderConfig, clip: ClipShape, num_scenes: int):
        super().__init__()
        self.encoder_config = encoder
        self.clip = clip
        self.num_scenes = num_scenes
        self.encoder = VideoEncoder(encoder, clip)
        self.head = nn.Linear(encoder.embed_dim, num_scenes)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder.encode_frames(images))

    def freeze(self) -> "SceneClassifier":
        for param in self.parameters():
            param.requires_grad_(False)
        return self.eval()

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())
