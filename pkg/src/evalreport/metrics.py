"""
评估指标：准确率、混淆矩阵（行 = 真实类别，列 = 预测类别）、每类平均置信度
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from ..errors import DataError
from ..fusion import PredictionRecord


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: List[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.class_names)
        if self.counts.shape != (n, n):
            raise ValueError(f"混淆矩阵形状 {self.counts.shape} 与类别数 {n} 不一致")
        if (self.counts < 0).any():
            raise ValueError("混淆矩阵计数不能为负")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else float("nan")

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.counts, index=self.class_names, columns=self.class_names)

    def to_csv(self, path: Union[str, Path]) -> Path:
        """表头为类别名，每行对应一个真实类别"""
        path = Path(path)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")
        return path

    def to_list(self) -> List[List[int]]:
        return self.counts.tolist()


def _labelled(records: Sequence[PredictionRecord]) -> List[PredictionRecord]:
    if not records:
        raise DataError("预测记录为空，无法计算指标")
    missing = [r.image_id for r in records if r.truth is None]
    if missing:
        raise DataError(f"以下记录缺少真实标签: {missing[:5]}")
    return list(records)


def confusion(records: Sequence[PredictionRecord], class_names: Optional[Sequence[str]] = None,
              n_classes: Optional[int] = None) -> ConfusionMatrix:
    """统计混淆矩阵，counts[真实][预测]"""
    records = _labelled(records)
    if class_names is None:
        n = n_classes or len(records[0].logits[0])
        class_names = [f"class{k}" for k in range(n)]
    n = len(class_names)
    counts = confusion_matrix(
        [r.truth for r in records], [r.fused_class for r in records], labels=list(range(n))
    )
    return ConfusionMatrix(counts, list(class_names))


def accuracy(records: Sequence[PredictionRecord]) -> float:
    records = _labelled(records)
    return sum(r.truth == r.fused_class for r in records) / len(records)


def mean_confidence(records: Sequence[PredictionRecord], k: int) -> Optional[float]:
    """类别 k 中被正确分类的记录的平均获胜 logit；没有这样的记录时返回 None"""
    scores = [r.winning_logit for r in records if r.truth == k and r.fused_class == k]
    if not scores:
        return None
    return float(np.mean(scores))
