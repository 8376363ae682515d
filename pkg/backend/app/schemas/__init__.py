from pydantic import BaseModel, Field, field_validator, model_validator
from typing import ClassVar, Optional, List
from enum import Enum


class KernelFamily(str, Enum):
    GAUSSIAN = "gaussian"


class BandwidthPolicy(str, Enum):
    FIXED = "fixed"
    MEDIAN_HEURISTIC = "median_heuristic"


class TemporalMode(str, Enum):
    SPATIOTEMPORAL = "spatiotemporal"
    PER_FRAME = "per_frame"


class BiasedStreamKind(str, Enum):
    NONE = "none"
    EXTRACTOR_BASED = "extractor_based"
    INPUT_BASED = "input_based"


class InputTransformMode(str, Enum):
    IDENTITY = "identity"
    SHUFFLE = "shuffle"
    DUPLICATE_SINGLE = "duplicate_single"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"


class RunLogKind(str, Enum):
    RUN_START = "run_start"
    STEP = "step"
    EVAL = "eval"
    CHECKPOINT = "checkpoint"
    RUN_END = "run_end"


class KernelSpec(BaseModel):
    family: KernelFamily = KernelFamily.GAUSSIAN
    bandwidth_policy: BandwidthPolicy = BandwidthPolicy.MEDIAN_HEURISTIC
    bandwidth: Optional[float] = None

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_bandwidth(self) -> "KernelSpec":
        if self.bandwidth_policy == BandwidthPolicy.FIXED:
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError("fixed bandwidth must be a positive number")
        return self

    @classmethod
    def fixed(cls, value: float) -> "KernelSpec":
        return cls(bandwidth_policy=BandwidthPolicy.FIXED, bandwidth=value)


class BiasSpec(BaseModel):
    num_actions: int = Field(4, ge=2)
    num_scenes: int = Field(4, ge=2)
    correlation: float = Field(0.9, ge=0.0, le=1.0)
    # scene paired with each action when the correlation draw succeeds
    scene_of_action: Optional[List[int]] = None

    @model_validator(mode="after")
    def fill_scene_of_action(self) -> "BiasSpec":
        if self.scene_of_action is None:
            self.scene_of_action = [a % self.num_scenes for a in range(self.num_actions)]
        if len(self.scene_of_action) != self.num_actions:
            raise ValueError("scene_of_action needs one entry per action")
        if any(s < 0 or s >= self.num_scenes for s in self.scene_of_action):
            raise ValueError("scene_of_action entries must be valid scene indices")
        return self


class ClipShape(BaseModel):
    frames: int = Field(8, gt=0)
    height: int = Field(32, gt=0)
    width: int = Field(32, gt=0)
    channels: int = Field(3, gt=0)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.frames, self.height, self.width, self.channels)


class DatasetConfig(BaseModel):
    bias: BiasSpec = Field(default_factory=BiasSpec)
    clip: ClipShape = Field(default_factory=ClipShape)
    n_train: int = Field(2000, ge=1)
    n_val: int = Field(500, ge=1)
    seed: int = 0
    actor_size: int = Field(6, ge=1)
    motion_step: int = Field(2, ge=1)
    data_dir: Optional[str] = None


class EncoderConfig(BaseModel):
    embed_dim: int = Field(64, gt=0)
    depth: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    patch_size: int = Field(8, ge=1)
    temporal_mode: TemporalMode = TemporalMode.SPATIOTEMPORAL
    mlp_ratio: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def check_heads(self) -> "EncoderConfig":
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        return self


class ModelConfig(BaseModel):
    unbiased: EncoderConfig = Field(default_factory=EncoderConfig)
    biased: Optional[EncoderConfig] = None
    biased_stream_kind: BiasedStreamKind = BiasedStreamKind.NONE
    scene_prediction: bool = False
    scene_classifier_path: str = "runs/scene_classifier.pt"
    grl_strength: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def check_streams(self) -> "ModelConfig":
        if self.unbiased.temporal_mode != TemporalMode.SPATIOTEMPORAL:
            raise ValueError("the unbiased stream needs a spatiotemporal encoder")
        if self.biased_stream_kind == BiasedStreamKind.NONE:
            if self.scene_prediction:
                raise ValueError("scene_prediction requires a biased stream")
            self.biased = None
            return self

        wanted = (
            TemporalMode.PER_FRAME
            if self.biased_stream_kind == BiasedStreamKind.EXTRACTOR_BASED
            else TemporalMode.SPATIOTEMPORAL
        )
        if self.biased is None:
            self.biased = self.unbiased.model_copy(update={"temporal_mode": wanted})
        elif self.biased.temporal_mode != wanted:
            raise ValueError(
                f"{self.biased_stream_kind.value} biased stream needs temporal_mode={wanted.value}"
            )
        if self.biased.embed_dim != self.unbiased.embed_dim:
            raise ValueError("both streams must share embed_dim (the scene head is shared)")
        return self


class LossWeights(BaseModel):
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    beta: float = Field(0.1, ge=0.0)
    # at batch 16 the biased HSIC estimate floors near 1e-2; the shipped configs use lam=10
    lam: float = Field(1000.0, ge=0.0)
    t0: int = Field(15, ge=0)
    kernel: KernelSpec = Field(default_factory=KernelSpec)


class OptimizerConfig(BaseModel):
    lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(5e-5, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.98, ge=0, lt=1)


class ScenePretrainConfig(BaseModel):
    encoder: EncoderConfig = Field(
        default_factory=lambda: EncoderConfig(
            embed_dim=32, depth=1, heads=4, patch_size=8, temporal_mode=TemporalMode.PER_FRAME
        )
    )
    num_images: int = Field(1024, ge=10)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    holdout_fraction: float = Field(0.2, gt=0, lt=1)
    min_accuracy: float = Field(0.95, ge=0, le=1)
    seed: int = 0

    @field_validator("encoder")
    @classmethod
    def per_frame_only(cls, value: EncoderConfig) -> EncoderConfig:
        if value.temporal_mode != TemporalMode.PER_FRAME:
            raise ValueError("the scene classifier encodes single frames (temporal_mode=per_frame)")
        return value


class ExperimentConfig(BaseModel):
    name: str = "experiment"
    seed: int = 0
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    scene_pretrain: ScenePretrainConfig = Field(default_factory=ScenePretrainConfig)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(16, ge=2)
    eval_every: int = Field(5, ge=1)
    output_dir: str = "runs/experiment"

    @model_validator(mode="after")
    def check_shapes(self) -> "ExperimentConfig":
        clip = self.dataset.clip
        encoders = [self.model.unbiased, self.scene_pretrain.encoder]
        if self.model.biased is not None:
            encoders.append(self.model.biased)
        for encoder in encoders:
            if clip.height % encoder.patch_size or clip.width % encoder.patch_size:
                raise ValueError(
                    f"patch_size {encoder.patch_size} must divide the frame size "
                    f"{clip.height}x{clip.width}"
                )
        if self.dataset.n_train < self.batch_size:
            raise ValueError("n_train must be at least one batch")
        if self.dataset.n_val < 2:
            raise ValueError("n_val must hold at least two videos")
        return self


class ManifestRecord(BaseModel):
    """One line of a dataset manifest; field order is id, action, scene, seed, motion_seed, split."""
    id: str
    action: int
    scene: int
    seed: int
    motion_seed: int
    split: Split


class LossBreakdown(BaseModel):
    """Loss terms of one training step.

    Two-stream runs satisfy total = alpha * total_u + (1 - alpha) * total_b.
    Single-stream runs optimise L_u alone: total == total_u and every biased
    field stays 0. A diverged step carries NaN in the terms it could not compute.
    """
    epoch: int
    step: int
    ce_u: float
    ce_b: float = 0.0
    scene_u: float = 0.0
    scene_b: float = 0.0
    ind: float = 0.0
    total_u: float
    total_b: float = 0.0
    total: float
    beta_t: float = 0.0
    transform: Optional[InputTransformMode] = None


class PredictionRecord(BaseModel):
    video_id: str
    true_action: int = Field(ge=0)
    pred_original: int = Field(ge=0)
    pred_bg_only: int = Field(ge=0)
    pred_human_only: int = Field(ge=0)
    pred_bg_swapped: int = Field(ge=0)
    swap_source_action: int = Field(ge=0)


class MetricsReport(BaseModel):
    top1: float
    bor: Optional[float] = None
    hor: Optional[float] = None
    shacc: float
    sberr: float
    inter_stream_hsic: Optional[float] = None
    num_videos: int = 0
    epoch: Optional[int] = None

    HSIC_SCALE: ClassVar[float] = 1e4

    def table_row(self) -> List[Optional[float]]:
        """Table column order: top-1, BOR, HOR, SHAcc, SBErr (percent), HSIC (x1e4)."""
        def pct(value: Optional[float]) -> Optional[float]:
            return None if value is None else 100.0 * value

        hsic = None if self.inter_stream_hsic is None else self.inter_stream_hsic * self.HSIC_SCALE
        return [pct(self.top1), pct(self.bor), pct(self.hor), pct(self.shacc), pct(self.sberr), hsic]


class RunLogEntry(BaseModel):
    kind: RunLogKind
    config_hash: str
    wall_time: float = 0.0
    epoch: Optional[int] = None
    step: Optional[int] = None
    breakdown: Optional[LossBreakdown] = None
    metrics: Optional[MetricsReport] = None
    checkpoint: Optional[str] = None
    message: Optional[str] = None


class RunSummary(BaseModel):
    run_id: str
    name: str
    config_hash: Optional[str] = None
    epochs_completed: int = 0
    steps_logged: int = 0
    latest_metrics: Optional[MetricsReport] = None
