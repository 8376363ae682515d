import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb

from app.core.config import settings
from app.schemas import BiasSpec, ClipShape, DatasetConfig, Split

logger = logging.getLogger(__name__)

ACTOR_VALUE = 1.0
DEFAULT_FILL = 0.5
TEXTURE_AMPLITUDE = 0.15
# one oscillation period of the left-right pattern, in frames
OSCILLATION = (0, 1, 2, 1)

Color = Union[float, Sequence[float]]


@dataclass
class SyntheticVideo:
    video_id: str
    frames: np.ndarray  # T x H x W x C, float32 in [0, 1]
    fg_mask: np.ndarray  # T x H x W, bool
    action: int
    scene: int
    plate: np.ndarray  # H x W x C clean background
    seed: int = 0
    motion_seed: int = 0
    split: Split = Split.TRAIN

    @property
    def clip_shape(self) -> Tuple[int, int, int, int]:
        return tuple(self.frames.shape)


@dataclass
class VariantSet:
    original: SyntheticVideo
    background_only: SyntheticVideo
    human_only: SyntheticVideo
    background_swapped: SyntheticVideo
    swap_source_action: int


def motion_offsets(action: int, frames: int, motion_step: int) -> np.ndarray:
    """(dy, dx) displacement of the actor for each frame of an action class.

    Classes cycle through up, down, left-right oscillation and diagonal; every
    further group of four moves faster.
    """
    speed = motion_step * (1 + action // 4)
    t = np.arange(frames)
    pattern = action % 4
    if pattern == 0:
        dy, dx = -speed * t, np.zeros_like(t)
    elif pattern == 1:
        dy, dx = speed * t, np.zeros_like(t)
    elif pattern == 2:
        dy, dx = np.zeros_like(t), speed * np.array([OSCILLATION[i % 4] for i in t])
    else:
        dy, dx = speed * t, speed * t
    return np.stack([dy, dx], axis=1)


def empirical_mutual_information(actions: Sequence[int], scenes: Sequence[int]) -> float:
    """Plug-in estimate of I(action; scene) in nats."""
    actions = np.asarray(actions)
    scenes = np.asarray(scenes)
    joint = np.zeros((actions.max() + 1, scenes.max() + 1))
    np.add.at(joint, (actions, scenes), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    ps = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pa @ ps)[nz])).sum())


class SyntheticVideoService:
    """Renders clips whose motion encodes the action and whose background encodes the scene."""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers

    def _draw_labels(self, rng: np.random.Generator, bias: BiasSpec) -> Tuple[int, int, int]:
        action = int(rng.integers(bias.num_actions))
        if rng.random() < bias.correlation:
            scene = bias.scene_of_action[action]
        else:
            scene = int(rng.integers(bias.num_scenes))
        motion_seed = int(rng.integers(2**31 - 1))
        return action, scene, motion_seed

    def sample_labels(self, n: int, bias: BiasSpec, seed: int, start_index: int = 0) -> List[Tuple[int, int]]:
        """The (action, scene) pairs `generate_dataset` would produce, without rendering."""
        labels = []
        for index in range(start_index, start_index + n):
            action, scene, _ = self._draw_labels(np.random.default_rng([seed, index]), bias)
            labels.append((action, scene))
        return labels

    def _start_range(self, offsets: np.ndarray, clip: ClipShape, actor_size: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        lo = -offsets.min(axis=0)
        hi = np.array([clip.height, clip.width]) - actor_size - offsets.max(axis=0)
        if (hi < lo).any():
            raise ValueError(
                f"actor of size {actor_size} moving over {clip.frames} frames does not fit "
                f"a {clip.height}x{clip.width} frame"
            )
        return (int(lo[0]), int(hi[0])), (int(lo[1]), int(hi[1]))

    def actor_mask(
        self,
        action: int,
        motion_seed: int,
        clip: ClipShape,
        actor_size: int = 6,
        motion_step: int = 2,
    ) -> np.ndarray:
        """Foreground mask sequence; a function of the action class and motion seed only."""
        offsets = motion_offsets(action, clip.frames, motion_step)
        (y_lo, y_hi), (x_lo, x_hi) = self._start_range(offsets, clip, actor_size)
        rng = np.random.default_rng(motion_seed)
        y0 = int(rng.integers(y_lo, y_hi + 1))
        x0 = int(rng.integers(x_lo, x_hi + 1))

        mask = np.zeros((clip.frames, clip.height, clip.width), dtype=bool)
        for t, (dy, dx) in enumerate(offsets):
            y, x = y0 + int(dy), x0 + int(dx)
            mask[t, y : y + actor_size, x : x + actor_size] = True
        return mask

    def render_plate(self, scene: int, num_scenes: int, clip: ClipShape, rng: np.random.Generator) -> np.ndarray:
        """Clean background: a scene hue plus a scene-specific stripe/checker texture."""
        if clip.channels == 1:
            base = np.array([0.15 + 0.5 * scene / max(num_scenes - 1, 1)])
        else:
            base = np.resize(hsv_to_rgb([scene / num_scenes, 0.6, 0.6]), clip.channels)

        period = 4.0 + 2.0 * (scene // 4)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        yy, xx = np.meshgrid(np.arange(clip.height), np.arange(clip.width), indexing="ij")
        pattern = scene % 4
        if pattern == 0:
            texture = np.sin(2 * np.pi * yy / period + phase)
        elif pattern == 1:
            texture = np.sin(2 * np.pi * xx / period + phase)
        elif pattern == 2:
            texture = np.sign(np.sin(2 * np.pi * yy / period + phase)) * np.sign(
                np.sin(2 * np.pi * xx / period + phase)
            )
        else:
            texture = np.sin(2 * np.pi * (xx + yy) / period + phase)

        jitter = rng.normal(0.0, 0.03)
        plate = base[None, None, :] + TEXTURE_AMPLITUDE * texture[..., None] + jitter
        return np.clip(plate, 0.0, 1.0).astype(np.float32)

    def _render_video(
        self,
        index: int,
        clip: ClipShape,
        bias: BiasSpec,
        seed: int,
        actor_size: int,
        motion_step: int,
        split: Split,
    ) -> SyntheticVideo:
        rng = np.random.default_rng([seed, index])
        action, scene, motion_seed = self._draw_labels(rng, bias)
        plate = self.render_plate(scene, bias.num_scenes, clip, rng)
        mask = self.actor_mask(action, motion_seed, clip, actor_size, motion_step)

        frames = np.repeat(plate[None], clip.frames, axis=0)
        frames[mask] = ACTOR_VALUE
        return SyntheticVideo(
            video_id=f"{split.value}-{index:06d}",
            frames=frames,
            fg_mask=mask,
            action=action,
            scene=scene,
            plate=plate,
            seed=seed,
            motion_seed=motion_seed,
            split=split,
        )

    def generate_dataset(
        self,
        n: int,
        clip: ClipShape,
        bias: BiasSpec,
        seed: int,
        actor_size: int = 6,
        motion_step: int = 2,
        start_index: int = 0,
        split: Split = Split.TRAIN,
    ) -> List[SyntheticVideo]:
        if n < 1:
            raise ValueError("n must be at least 1")
        if actor_size > min(clip.height, clip.width):
            raise ValueError(f"actor of size {actor_size} is larger than the {clip.height}x{clip.width} frame")
        for action in range(bias.num_actions):
            self._start_range(motion_offsets(action, clip.frames, motion_step), clip, actor_size)

        workers = self.max_workers or settings.MAX_WORKERS
        indices = range(start_index, start_index + n)
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            videos = list(
                pool.map(
                    lambda i: self._render_video(i, clip, bias, seed, actor_size, motion_step, split),
                    indices,
                )
            )
        logger.info(
            f"Generated {n} {split.value} videos "
            f"(rho={bias.correlation}, MI={empirical_mutual_information([v.action for v in videos], [v.scene for v in videos]):.3f} nats)"
        )
        return videos

    def generate_splits(self, config: DatasetConfig) -> Tuple[List[SyntheticVideo], List[SyntheticVideo]]:
        train = self.generate_dataset(
            config.n_train, config.clip, config.bias, config.seed,
            actor_size=config.actor_size, motion_step=config.motion_step, split=Split.TRAIN,
        )
        val = self.generate_dataset(
            config.n_val, config.clip, config.bias, config.seed,
            actor_size=config.actor_size, motion_step=config.motion_step,
            start_index=config.n_train, split=Split.VAL,
        )
        return train, val

    def scene_plates(self, n: int, config: DatasetConfig, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Background-only images labelled by scene, for pretraining the scene classifier."""
        rng = np.random.default_rng(seed)
        scenes = rng.integers(config.bias.num_scenes, size=n)
        images = np.stack(
            [self.render_plate(int(s), config.bias.num_scenes, config.clip, rng) for s in scenes]
        )
        return images, scenes.astype(np.int64)

    def background_only(self, v: SyntheticVideo) -> SyntheticVideo:
        frames = np.repeat(v.plate[None], v.frames.shape[0], axis=0)
        return replace(v, frames=frames, fg_mask=np.zeros_like(v.fg_mask))

    def human_only(self, v: SyntheticVideo, fill: Color = DEFAULT_FILL) -> SyntheticVideo:
        fill_plate = np.empty_like(v.plate)
        fill_plate[...] = np.asarray(fill, dtype=v.plate.dtype)
        frames = np.where(v.fg_mask[..., None], v.frames, fill_plate[None])
        return replace(v, frames=frames, plate=fill_plate)

    def background_swap(self, v: SyntheticVideo, donor: SyntheticVideo) -> SyntheticVideo:
        if donor.action == v.action:
            raise ValueError(f"donor {donor.video_id} has the same action class {v.action}")
        if donor.frames.shape != v.frames.shape:
            raise ValueError(f"clip shape mismatch: {donor.frames.shape} vs {v.frames.shape}")
        frames = np.where(v.fg_mask[..., None], v.frames, donor.plate[None])
        return replace(v, frames=frames, scene=donor.scene, plate=donor.plate.copy())

    def pick_donor(self, videos: Sequence[SyntheticVideo], v: SyntheticVideo, rng: np.random.Generator) -> SyntheticVideo:
        candidates = [d for d in videos if d.action != v.action]
        if not candidates:
            raise ValueError("no video of a different action class to take a background from")
        return candidates[int(rng.integers(len(candidates)))]

    def build_variants(self, v: SyntheticVideo, donor: SyntheticVideo, fill: Color = DEFAULT_FILL) -> VariantSet:
        return VariantSet(
            original=v,
            background_only=self.background_only(v),
            human_only=self.human_only(v, fill),
            background_swapped=self.background_swap(v, donor),
            swap_source_action=donor.action,
        )


synth_data_service = SyntheticVideoService()
