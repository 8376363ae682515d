import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ArtifactNotFoundError, DatasetError
from app.schemas import DatasetConfig, ManifestRecord, Split
from app.services.synth_data import SyntheticVideo, synth_data_service

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
DATASET_CONFIG_NAME = "dataset.json"


class DatasetStore:
    """A dataset directory: one `<id>.npz` per video plus a line-delimited manifest.

    Manifest fields, in order: id, action, scene, seed, motion_seed, split.
    """

    def manifest_path(self, root: Path) -> Path:
        return Path(root) / MANIFEST_NAME

    def exists(self, root: Path) -> bool:
        return self.manifest_path(root).is_file()

    def save(self, root: Path, videos: Sequence[SyntheticVideo], config: Optional[DatasetConfig] = None) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if config is not None:
            (root / DATASET_CONFIG_NAME).write_text(config.model_dump_json(indent=2))

        # records are keyed by id; saving a video again replaces its line
        records = {r.id: r for r in self.read_manifest(root)} if self.exists(root) else {}
        for video in videos:
            np.savez_compressed(
                root / f"{video.video_id}.npz",
                frames=video.frames,
                fg_mask=video.fg_mask,
                plate=video.plate,
            )
            records[video.video_id] = ManifestRecord(
                id=video.video_id,
                action=video.action,
                scene=video.scene,
                seed=video.seed,
                motion_seed=video.motion_seed,
                split=video.split,
            )
        self.manifest_path(root).write_text("".join(r.model_dump_json() + "\n" for r in records.values()))
        logger.info(f"Saved {len(videos)} videos to {root}")
        return root

    def read_manifest(self, root: Path) -> List[ManifestRecord]:
        path = self.manifest_path(root)
        if not path.is_file():
            raise ArtifactNotFoundError(path, "dataset manifest")
        records = []
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.model_validate_json(line))
            except ValueError as e:
                raise DatasetError(f"{path}:{line_no}: malformed manifest record: {e}") from e
        return records

    def read_config(self, root: Path) -> Optional[DatasetConfig]:
        path = Path(root) / DATASET_CONFIG_NAME
        if not path.is_file():
            return None
        return DatasetConfig.model_validate(json.loads(path.read_text()))

    def load(self, root: Path, split: Optional[Split] = None) -> List[SyntheticVideo]:
        root = Path(root)
        videos = []
        for record in self.read_manifest(root):
            if split is not None and record.split != split:
                continue
            array_path = root / f"{record.id}.npz"
            if not array_path.is_file():
                raise ArtifactNotFoundError(array_path, "video arrays")
            with np.load(array_path) as arrays:
                videos.append(
                    SyntheticVideo(
                        video_id=record.id,
                        frames=arrays["frames"],
                        fg_mask=arrays["fg_mask"],
                        action=record.action,
                        scene=record.scene,
                        plate=arrays["plate"],
                        seed=record.seed,
                        motion_seed=record.motion_seed,
                        split=record.split,
                    )
                )
        logger.info(f"Loaded {len(videos)} videos from {root}")
        return videos

    def _stored(self, config: DatasetConfig) -> bool:
        """Whether `config.data_dir` holds a dataset; raises if it was generated from another config."""
        if not config.data_dir or not self.exists(config.data_dir):
            return False
        stored = self.read_config(config.data_dir)
        if stored is not None and stored.model_dump(exclude={"data_dir"}) != config.model_dump(exclude={"data_dir"}):
            raise DatasetError(f"dataset in {config.data_dir} was generated with a different configuration")
        return True

    def load_or_generate(self, config: DatasetConfig) -> Tuple[List[SyntheticVideo], List[SyntheticVideo]]:
        """Train and val splits from `config.data_dir` if it holds a dataset, else freshly generated
        (and persisted there when a directory is configured)."""
        if self._stored(config):
            return self.load(config.data_dir, Split.TRAIN), self.load(config.data_dir, Split.VAL)

        train, val = synth_data_service.generate_splits(config)
        if config.data_dir:
            self.save(config.data_dir, train + val, config)
        return train, val

    def load_split(self, config: DatasetConfig, split: Split) -> List[SyntheticVideo]:
        if self._stored(config):
            return self.load(config.data_dir, split)
        if split == Split.TRAIN:
            start, n = 0, config.n_train
        else:
            start, n = config.n_train, config.n_val
        return synth_data_service.generate_dataset(
            n, config.clip, config.bias, config.seed,
            actor_size=config.actor_size, motion_step=config.motion_step,
            start_index=start, split=split,
        )


dataset_store = DatasetStore()
