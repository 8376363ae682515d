import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from app.schemas import ClipShape, EncoderConfig, TemporalMode


class PatchEmbed(nn.Module):
    def __init__(self, channels: int, dim: int, patch_size: int):
        super().__init__()
        self.proj = nn.Conv2d(channels, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        # N H W C -> N P D
        x = self.proj(rearrange(frames, "N H W C -> N C H W"))
        return rearrange(x, "N D h w -> N (h w) D")


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        assert dim % n_heads == 0
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(x), "B L (three H D) -> three B H L D", three=3, H=self.n_heads)
        attn = F.softmax((q * self.head_dim**-0.5) @ k.transpose(-2, -1), dim=-1)
        return self.out(rearrange(attn @ v, "B H L D -> B L (H D)"))


class MLP(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = max(1, int(dim * ratio))
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class VideoEncoder(nn.Module):
    """Patch-token transformer over a B x T x H x W x C clip.

    spatiotemporal: one joint attention over all T*P tokens with a learned
    temporal position embedding, so frame order matters.
    per_frame: every frame is encoded on its own and the frame features are
    averaged over T, so the output ignores frame order.
    The output feature is the mean of the final token representations.
    """

    def __init__(self, config: EncoderConfig, clip: ClipShape):
        super().__init__()
        if clip.height % config.patch_size or clip.width % config.patch_size:
            raise ValueError(f"patch_size {config.patch_size} does not divide {clip.height}x{clip.width}")
        self.config = config
        self.clip = clip
        self.num_patches = (clip.height // config.patch_size) * (clip.width // config.patch_size)

        self.patch_embed = PatchEmbed(clip.channels, config.embed_dim, config.patch_size)
        self.spatial_pos = nn.Parameter(torch.zeros(1, self.num_patches, config.embed_dim))
        nn.init.trunc_normal_(self.spatial_pos, std=0.02)
        if config.temporal_mode == TemporalMode.SPATIOTEMPORAL:
            self.temporal_pos = nn.Parameter(torch.zeros(1, clip.frames, 1, config.embed_dim))
            nn.init.trunc_normal_(self.temporal_pos, std=0.02)
        else:
            self.register_parameter("temporal_pos", None)
        self.blocks = nn.ModuleList(
            [Block(config.embed_dim, config.heads, config.mlp_ratio) for _ in range(config.depth)]
        )
        self.norm = nn.LayerNorm(config.embed_dim)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def _check_shape(self, video: torch.Tensor) -> None:
        expected = self.clip.as_tuple()
        if video.dim() != 5 or tuple(video.shape[2:]) != expected[1:]:
            raise ValueError(f"expected B x {expected} clips, got {tuple(video.shape)}")
        if self.config.temporal_mode == TemporalMode.SPATIOTEMPORAL and video.shape[1] != expected[0]:
            raise ValueError(f"expected {expected[0]} frames, got {video.shape[1]}")

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """N x H x W x C images -> N x D, attending within each image only."""
        x = self.patch_embed(frames) + self.spatial_pos
        for block in self.blocks:
            x = block(x)
        return self.norm(x).mean(dim=1)

    def frame_features(self, video: torch.Tensor) -> torch.Tensor:
        if self.config.temporal_mode != TemporalMode.PER_FRAME:
            raise ValueError("frame_features is only defined for per_frame encoders")
        self._check_shape(video)
        B = video.shape[0]
        feats = self.encode_frames(rearrange(video, "B T H W C -> (B T) H W C"))
        return rearrange(feats, "(B T) D -> B T D", B=B)

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        if self.config.temporal_mode == TemporalMode.PER_FRAME:
            return self.frame_features(video).mean(dim=1)

        self._check_shape(video)
        B = video.shape[0]
        x = self.patch_embed(rearrange(video, "B T H W C -> (B T) H W C")) + self.spatial_pos
        x = rearrange(x, "(B T) P D -> B T P D", B=B) + self.temporal_pos
        x = rearrange(x, "B T P D -> B (T P) D")
        for block in self.blocks:
            x = block(x)
        return self.norm(x).mean(dim=1)
