import cv2
import numpy as np
import pytest
import torch
from sklearn.linear_model import LogisticRegression

from src.data.augment import AugmentPolicy, augment
from src.data.dataset import ImageSplit, decode_image, load_dataset, write_dataset
from src.data.folds import FoldSplits, make_folds
from src.data.synth import SynthSpec, synth_dataset
from src.errors import ConfigError, DataError
from src.config import TrainConfig


def _synth(n_classes=2, per_class=500, size=(8, 8), seed=0):
    return synth_dataset(SynthSpec(n_classes=n_classes, images_per_class=per_class, size=size), seed)


class TestLoadDataset:
    """测试按类别目录读取数据集"""

    def test_two_classes(self, tmp_path):
        """两个目录各 500 张，共 1000 张，N=2"""
        write_dataset(_synth(), tmp_path)
        ds = load_dataset(tmp_path, 8)
        assert len(ds) == 1000 and ds.n_classes == 2
        assert ds.images.shape == (1000, 3, 8, 8)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_sorted_class_assignment(self, tmp_path):
        for name in ("b", "a"):
            (tmp_path / name).mkdir()
            cv2.imwrite(str(tmp_path / name / "x.png"), np.zeros((4, 4, 3), np.uint8))
        ds = load_dataset(tmp_path, 8)
        assert ds.class_names == ["a", "b"]
        assert [(s.image_id, s.label) for s in ds.samples] == [("a/x.png", 0), ("b/x.png", 1)]

    def test_three_classes(self, tmp_path):
        write_dataset(_synth(n_classes=3, per_class=20), tmp_path)
        ds = load_dataset(tmp_path, 8)
        assert len(ds) == 60 and ds.n_classes == 3

    def test_resize_and_roundtrip(self, tmp_path):
        """写出再读回，像素误差不超过 8 位量化"""
        ds = _synth(per_class=3, size=(16, 16))
        write_dataset(ds, tmp_path)
        same = load_dataset(tmp_path, 16)
        assert np.abs(same.images - ds.images).max() <= 0.5 / 255 + 1e-6
        assert load_dataset(tmp_path, (8, 12)).images.shape[2:] == (8, 12)

    def test_empty_class_dir(self, tmp_path):
        (tmp_path / "cat").mkdir()
        (tmp_path / "dog").mkdir()
        cv2.imwrite(str(tmp_path / "cat" / "1.png"), np.zeros((4, 4, 3), np.uint8))
        with pytest.raises(DataError, match="dog"):
            load_dataset(tmp_path, 8)

    def test_undecodable_file(self, tmp_path):
        (tmp_path / "cat").mkdir()
        bad = tmp_path / "cat" / "broken.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(DataError, match="broken.png"):
            load_dataset(tmp_path, 8)

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError, match="nowhere"):
            load_dataset(tmp_path / "nowhere", 8)

    def test_decode_rgb_order(self, temp_image_path, tmp_path):
        """cv2 读出的 BGR 被转换为 RGB"""
        path = tmp_path / "blue.png"
        image = np.zeros((4, 4, 3), np.uint8)
        image[..., 0] = 255  # BGR 中的蓝色
        cv2.imwrite(str(path), image)
        rgb = decode_image(path, (4, 4))
        assert rgb.shape == (3, 4, 4)
        assert rgb[2].min() == 1.0 and rgb[0].max() == 0.0
        assert decode_image(temp_image_path, (8, 8)).shape == (3, 8, 8)


class TestFolds:
    """测试交叉验证划分"""

    def test_sizes_1000(self):
        """1000 张图像每折 720 / 80 / 200"""
        splits = make_folds(_synth(), n_folds=3, seed=0)
        assert len(splits) == 3
        for fold in splits.folds:
            assert (len(fold.train_ids), len(fold.val_ids), len(fold.test_ids)) == (720, 80, 200)

    def test_sizes_1400(self):
        splits = make_folds(_synth(per_class=700), n_folds=3, seed=0)
        assert all(len(f.test_ids) == 280 for f in splits.folds)

    def test_partition_and_rotation(self):
        ds = _synth(per_class=50)
        splits = make_folds(ds, n_folds=3, seed=2)
        everything = {s.image_id for s in ds.samples}
        for fold in splits.folds:
            train, val, test = set(fold.train_ids), set(fold.val_ids), set(fold.test_ids)
            assert train | val | test == everything
            assert not (train & val) and not (train & test) and not (val & test)
        tests = [set(f.test_ids) for f in splits.folds]
        assert not (tests[0] & tests[1]) and not (tests[1] & tests[2])

    def test_stratified(self):
        ds = _synth(n_classes=3, per_class=40)
        labels = dict(zip((s.image_id for s in ds.samples), ds.labels))
        for fold in make_folds(ds, 3, seed=1).folds:
            for split in ("train", "val", "test"):
                ids = fold.ids(split)
                for k in range(3):
                    count = sum(labels[i] == k for i in ids)
                    assert abs(count - len(ids) / 3) <= 1

    def test_same_seed_same_ids(self):
        ds = _synth(per_class=30)
        a, b = make_folds(ds, 3, seed=9), make_folds(ds, 3, seed=9)
        assert a.folds == b.folds
        assert make_folds(ds, 3, seed=10).folds != a.folds

    def test_class_too_small(self):
        with pytest.raises(DataError):
            make_folds(_synth(per_class=2), n_folds=3)

    def test_manifest(self, tmp_path):
        splits = make_folds(_synth(per_class=10), 2, seed=4)
        rows = splits.to_manifest()
        assert {r["fold"] for r in rows} == {1, 2}
        assert len(rows) == 2 * 20
        loaded = FoldSplits.load(splits.save(tmp_path / "folds.json"))
        assert loaded.folds == splits.folds and loaded.seed == 4
        with pytest.raises(DataError):
            splits.folds[0].ids("holdout")


class TestAugment:
    """测试训练集数据增强"""

    def test_disabled_is_identity(self):
        image = np.random.default_rng(0).random((3, 8, 8)).astype(np.float32)
        out = augment(image, AugmentPolicy(enabled=False), np.random.default_rng(1))
        assert np.array_equal(out, image)

    def test_pure_flip_is_involution(self):
        policy = AugmentPolicy(hflip_prob=1.0, rotation_degrees=0, translate=0, shear_degrees=0,
                               enabled=True)
        image = np.random.default_rng(0).random((3, 6, 8)).astype(np.float32)
        once = augment(image, policy, np.random.default_rng(1))
        assert np.array_equal(once, image[:, :, ::-1])
        assert np.array_equal(augment(once, policy, np.random.default_rng(2)), image)

    def test_seeded_and_bounded(self):
        policy = AugmentPolicy(enabled=True)
        image = np.random.default_rng(0).random((3, 16, 16)).astype(np.float32)
        a = augment(image, policy, np.random.default_rng(5))
        b = augment(image, policy, np.random.default_rng(5))
        assert np.array_equal(a, b)
        assert a.shape == image.shape and a.dtype == np.float32
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_invalid_policy(self):
        with pytest.raises(ConfigError):
            AugmentPolicy(hflip_prob=1.5)

    def test_only_training_split_changes(self):
        """验证/测试集图像在各轮之间逐位相同"""
        ds = _synth(per_class=4, size=(16, 16))
        ids = [s.image_id for s in ds.samples]
        train = ImageSplit(ds, ids, AugmentPolicy(enabled=True), seed=1)
        held_out = ImageSplit(ds, ids)
        first = [train[i][0].clone() for i in range(len(ids))]
        plain = [held_out[i][0].clone() for i in range(len(ids))]
        train.set_epoch(1)
        held_out.set_epoch(1)
        assert any(not torch.equal(a, train[i][0]) for i, a in enumerate(first))
        assert all(torch.equal(a, held_out[i][0]) for i, a in enumerate(plain))


class TestSynth:
    """测试合成数据集"""

    def test_counts(self):
        ds = _synth(per_class=100, size=(32, 32))
        assert len(ds) == 200
        assert np.bincount(ds.labels).tolist() == [100, 100]
        assert ds.images.shape == (200, 3, 32, 32)

    def test_separable_on_channel_means(self):
        ds = _synth(n_classes=3, per_class=100, size=(32, 32), seed=1)
        features = ds.images.mean(axis=(2, 3))
        clf = LogisticRegression(C=10.0, max_iter=1000).fit(features, ds.labels)
        assert clf.score(features, ds.labels) >= 0.99

    def test_seed_changes_pixels(self):
        a, b = _synth(per_class=5, seed=0), _synth(per_class=5, seed=1)
        assert a.images.shape == b.images.shape
        assert not np.array_equal(a.images, b.images)
        assert np.array_equal(a.images, _synth(per_class=5, seed=0).images)

    def test_ids_match_written_dataset(self, tmp_path):
        """写盘后再读取，image_id 与类别名都不变"""
        ds = _synth(per_class=3)
        loaded = load_dataset(write_dataset(ds, tmp_path / "d"), 8)
        assert [s.image_id for s in loaded.samples] == [s.image_id for s in ds.samples]
        assert loaded.class_names == ds.class_names
        assert all(s.image_id.endswith(".png") for s in ds.samples)

    def test_many_classes_keep_label_order(self, tmp_path):
        """11 个类别时目录名补零，读回后标签不变"""
        ds = _synth(n_classes=11, per_class=1)
        assert ds.class_names[0] == "class00" and ds.class_names[10] == "class10"
        loaded = load_dataset(write_dataset(ds, tmp_path / "d"), 8)
        assert loaded.labels.tolist() == ds.labels.tolist()
        assert [s.image_id for s in loaded.samples] == [s.image_id for s in ds.samples]

    def test_default_size_matches_default_config(self):
        assert SynthSpec().size == (TrainConfig().image_size,) * 2

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            SynthSpec(stripe_amplitude=0.2, noise_amplitude=0.1)
