import json

import numpy as np
import pytest

from app.core.exceptions import ArtifactNotFoundError, DatasetError
from app.schemas import Split
from app.services.dataset_store import MANIFEST_NAME, dataset_store
from app.services.synth_data import synth_data_service


class TestDatasetStore:
    """Persisting and reloading synthetic datasets."""

    def test_save_then_load_gives_identical_videos(self, tmp_path, tiny_splits):
        train, val = tiny_splits
        dataset_store.save(tmp_path, train + val)

        loaded = dataset_store.load(tmp_path)
        assert [v.video_id for v in loaded] == [v.video_id for v in train + val]
        for original, restored in zip(train + val, loaded):
            assert np.array_equal(original.frames, restored.frames)
            assert np.array_equal(original.fg_mask, restored.fg_mask)
            assert np.array_equal(original.plate, restored.plate)
            assert (original.action, original.scene, original.motion_seed) == (
                restored.action,
                restored.scene,
                restored.motion_seed,
            )

    def test_manifest_field_order(self, tmp_path, tiny_splits):
        train, _ = tiny_splits
        dataset_store.save(tmp_path, train[:1])
        line = (tmp_path / MANIFEST_NAME).read_text().splitlines()[0]
        assert list(json.loads(line)) == ["id", "action", "scene", "seed", "motion_seed", "split"]

    def test_load_filters_by_split(self, tmp_path, tiny_splits):
        train, val = tiny_splits
        dataset_store.save(tmp_path, train + val)
        assert len(dataset_store.load(tmp_path, Split.TRAIN)) == len(train)
        assert all(v.split == Split.VAL for v in dataset_store.load(tmp_path, Split.VAL))

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(ArtifactNotFoundError) as exc:
            dataset_store.load(tmp_path)
        assert exc.value.path == tmp_path / MANIFEST_NAME

    def test_missing_arrays_raise(self, tmp_path, tiny_splits):
        train, _ = tiny_splits
        dataset_store.save(tmp_path, train[:2])
        (tmp_path / f"{train[0].video_id}.npz").unlink()
        with pytest.raises(ArtifactNotFoundError):
            dataset_store.load(tmp_path)

    def test_malformed_manifest_raises(self, tmp_path):
        (tmp_path / MANIFEST_NAME).write_text('{"id": "x"}\n')
        with pytest.raises(DatasetError):
            dataset_store.read_manifest(tmp_path)

    def test_load_or_generate_persists_then_reloads(self, tmp_path, tiny_config):
        config = tiny_config.dataset.model_copy(update={"data_dir": str(tmp_path / "data")})
        train, val = dataset_store.load_or_generate(config)
        assert dataset_store.exists(tmp_path / "data")

        train2, val2 = dataset_store.load_or_generate(config)
        assert [v.video_id for v in train2] == [v.video_id for v in train]
        assert all(np.array_equal(a.frames, b.frames) for a, b in zip(val, val2))

    def test_load_or_generate_rejects_different_config(self, tmp_path, tiny_config):
        config = tiny_config.dataset.model_copy(update={"data_dir": str(tmp_path)})
        dataset_store.load_or_generate(config)
        with pytest.raises(DatasetError):
            dataset_store.load_or_generate(config.model_copy(update={"seed": 99}))

    def test_load_split_without_directory_regenerates(self, tiny_config):
        _, val = synth_data_service.generate_splits(tiny_config.dataset)
        regenerated = dataset_store.load_split(tiny_config.dataset, Split.VAL)
        assert [v.video_id for v in regenerated] == [v.video_id for v in val]
        assert all(np.array_equal(a.frames, b.frames) for a, b in zip(val, regenerated))

    def test_saving_again_does_not_duplicate_records(self, tmp_path, tiny_splits):
        train, val = tiny_splits
        dataset_store.save(tmp_path, train)
        dataset_store.save(tmp_path, train + val)
        ids = [r.id for r in dataset_store.read_manifest(tmp_path)]
        assert len(ids) == len(set(ids)) == len(train) + len(val)

    def test_load_split_rejects_different_config(self, tmp_path, tiny_config):
        config = tiny_config.dataset.model_copy(update={"data_dir": str(tmp_path)})
        dataset_store.load_or_generate(config)
        with pytest.raises(DatasetError):
            dataset_store.load_split(config.model_copy(update={"seed": 99}), Split.VAL)
