"""
训练状态与实验结果
"""

import math
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch

from ..evalreport.metrics import ConfusionMatrix
from ..events.listener import EventListener
from ..fusion import PredictionRecord
from ..nets.bundle import ModelBundle


def seed_everything(seed: int) -> None:
    random.seed(seed)
    os.environ["PYTHONHASHSEED"] = str(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.backends.cudnn.deterministic = True


@dataclass
class EpochMetrics:
    """一个轮次的平均指标，epoch 从 1 开始编号"""
    epoch: int
    train_loss_clf: float
    mean_gen_total: float
    val_loss: float
    val_acc: float
    lr_clf: float
    train_acc: float = float("nan")
    n_batches: int = 0

    def to_row(self) -> Dict[str, float]:
        return {
            "epoch": self.epoch,
            "train_loss_clf": self.train_loss_clf,
            "mean_gen_total": self.mean_gen_total,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "lr_clf": self.lr_clf,
        }


@dataclass
class TrainState:
    """一折训练的可变状态"""
    bundle: ModelBundle
    seed: int = 0
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    improved: bool = False
    history: List[EpochMetrics] = field(default_factory=list)
    best_tensors: Optional[Dict[str, torch.Tensor]] = None
    best_optimizers: Optional[Dict[str, Any]] = None
    dump_dir: Optional[Path] = None
    step: int = 0
    fold: int = 0
    listeners: Sequence[EventListener] = ()


@dataclass
class FoldResult:
    fold: int
    best_epoch: int = 0
    val_loss: float = math.nan
    test_accuracy: float = math.nan
    confusion: Optional[ConfusionMatrix] = None
    mean_confidences: List[Optional[float]] = field(default_factory=list)
    history: List[EpochMetrics] = field(default_factory=list)
    predictions: List[PredictionRecord] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    @property
    def epochs_trained(self) -> int:
        return len(self.history)


@dataclass
class ExperimentResult:
    """一个 lambda 取值下全部折的结果"""
    per_fold: List[FoldResult]
    lambda_: float
    config_digest: str
    setup_label: str
    class_names: List[str]

    @property
    def failed(self) -> bool:
        return any(f.failed for f in self.per_fold)

    @property
    def completed_folds(self) -> List[FoldResult]:
        return [f for f in self.per_fold if not f.failed]

    @property
    def mean_accuracy(self) -> Optional[float]:
        """未失败各折测试准确率的平均值"""
        done = self.completed_folds
        if not done:
            return None
        return float(sum(f.test_accuracy for f in done) / len(done))

    def mean_confidences(self) -> List[Optional[float]]:
        """每个类别在各折上的平均置信度，某折没有正确样本时不参与平均"""
        out: List[Optional[float]] = []
        for k in range(len(self.class_names)):
            values = [f.mean_confidences[k] for f in self.completed_folds
                      if f.mean_confidences[k] is not None]
            out.append(float(np.mean(values)) if values else None)
        return out
