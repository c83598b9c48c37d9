"""
交叉验证划分

每个类别用同一个种子打乱一次，第 f 折的测试集取打乱后序列中的第 f 个
test_fraction 大小的块（轮换）；剩余部分为训练集，再用 seed+f 从中按类别
抽出 val_fraction 作为验证集。三个集合互不相交且覆盖整个数据集。
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from ..errors import DataError
from .dataset import Dataset

SPLITS = ("train", "val", "test")


@dataclass
class Fold:
    train_ids: List[str]
    val_ids: List[str]
    test_ids: List[str]

    def ids(self, split: str) -> List[str]:
        if split not in SPLITS:
            raise DataError(f"未知的数据划分: {split}，可选: {SPLITS}")
        return getattr(self, f"{split}_ids")


@dataclass
class FoldSplits:
    folds: List[Fold]
    seed: int
    test_fraction: float = 0.2
    val_fraction: float = 0.1

    def __len__(self) -> int:
        return len(self.folds)

    def to_manifest(self) -> List[Dict[str, Union[int, str]]]:
        """导出为 {fold, split, image_id} 记录，fold 从 1 开始编号"""
        rows = []
        for f, fold in enumerate(self.folds, start=1):
            for split in SPLITS:
                rows += [{"fold": f, "split": split, "image_id": i} for i in fold.ids(split)]
        return rows

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "seed": self.seed,
            "test_fraction": self.test_fraction,
            "val_fraction": self.val_fraction,
            "entries": self.to_manifest(),
        }
        path.write_text(json.dumps(payload, indent=1, ensure_ascii=False), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FoldSplits":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"找不到划分清单: {path}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        n_folds = max((e["fold"] for e in payload["entries"]), default=0)
        folds = [Fold([], [], []) for _ in range(n_folds)]
        for e in payload["entries"]:
            folds[e["fold"] - 1].ids(e["split"]).append(e["image_id"])
        return cls(folds, payload["seed"], payload["test_fraction"], payload["val_fraction"])


def make_folds(ds: Dataset, n_folds: int = 3, seed: int = 0,
               test_fraction: float = 0.2, val_fraction: float = 0.1) -> FoldSplits:
    """按类别分层的 n_folds 折划分"""
    if n_folds < 1:
        raise DataError(f"n_folds 必须 >= 1，当前值: {n_folds}")
    labels = ds.labels
    by_class = {k: np.flatnonzero(labels == k) for k in range(ds.n_classes)}
    for k, rows in by_class.items():
        if len(rows) < max(n_folds, 2):
            raise DataError(
                f"类别 {ds.class_names[k]} 只有 {len(rows)} 个样本，至少需要 {max(n_folds, 2)} 个"
            )

    shuffle_rng = np.random.default_rng(seed)
    permuted = {k: shuffle_rng.permutation(rows) for k, rows in by_class.items()}

    folds = []
    for f in range(n_folds):
        val_rng = np.random.default_rng(seed + f)
        train_rows, val_rows, test_rows = [], [], []
        for k in range(ds.n_classes):
            rows = permuted[k]
            n = len(rows)
            n_test = min(max(1, int(round(n * test_fraction))), n - 1)
            # 测试块按折轮换，超过末尾时回绕
            positions = (f * n_test + np.arange(n_test)) % n
            mask = np.zeros(n, dtype=bool)
            mask[positions] = True
            test_k, train_k = rows[mask], rows[~mask]
            n_val = int(round(len(train_k) * val_fraction))
            val_pick = val_rng.permutation(len(train_k))[:n_val]
            val_mask = np.zeros(len(train_k), dtype=bool)
            val_mask[val_pick] = True
            train_rows += train_k[~val_mask].tolist()
            val_rows += train_k[val_mask].tolist()
            test_rows += test_k.tolist()
        folds.append(Fold(
            [ds.samples[r].image_id for r in sorted(train_rows)],
            [ds.samples[r].image_id for r in sorted(val_rows)],
            [ds.samples[r].image_id for r in sorted(test_rows)],
        ))
    return FoldSplits(folds, seed, test_fraction, val_fraction)
