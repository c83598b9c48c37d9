"""
训练循环：学习率衰减、早停、按折训练与测试
"""

import copy
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import torch
from torch.utils.data import DataLoader

from ..config import TrainConfig, config_digest
from ..data.dataset import Dataset, ImageSplit
from ..data.folds import Fold, FoldSplits
from ..errors import ConfigError, DivergenceError
from ..evalreport.metrics import accuracy, confusion, mean_confidence
from ..events.events import EpochCompleteEvent, FoldCompleteEvent, ProgressEvent, RunEvent
from ..events.listener import EventListener
from ..events.performance import PerformanceMonitor
from ..fusion import fuse_matrix, predict_logits, predict_split
from ..losses import classifier_ce, fused_ce
from ..nets.bundle import ModelBundle, build_bundle, save_weights
from .state import EpochMetrics, ExperimentResult, FoldResult, TrainState, seed_everything
from .steps import check_finite, classifier_step, generator_step

logger = logging.getLogger(__name__)


def lr_schedule(epoch: int, lr_clf: float = 1e-3, factor: float = 0.1, every: int = 5) -> float:
    """分类器学习率：每 every 轮乘以 factor，epoch 从 0 开始"""
    if epoch < 0:
        raise ValueError(f"epoch 必须 >= 0，当前值: {epoch}")
    # 用除法而不是连乘，0.1 的连乘会累积舍入误差
    return lr_clf / (1.0 / factor) ** (epoch // every)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def early_stop_check(state: TrainState) -> bool:
    """用最近一轮的验证损失更新早停计数，返回是否停止

    只有严格更低的损失才算改进；连续 patience 轮没有改进时停止。
    """
    latest = state.history[-1]
    state.improved = latest.val_loss < state.best_val_loss
    if state.improved:
        state.best_val_loss = latest.val_loss
        state.best_epoch = latest.epoch
        state.epochs_since_best = 0
    else:
        state.epochs_since_best += 1
    return state.epochs_since_best >= state.bundle.cfg.patience


@dataclass
class SplitEvaluation:
    loss: float
    accuracy: float
    n: int


def _param_dtype(bundle: ModelBundle) -> torch.dtype:
    return next(bundle.classifier.parameters()).dtype


def evaluate_split(bundle: ModelBundle, split: ImageSplit, batch_size: int = 64,
                   mode: str = "streams") -> SplitEvaluation:
    """推理模式下的分类损失与融合准确率

    mode=streams 为各流交叉熵之和，mode=fused 为融合交叉熵。
    """
    if len(split) == 0:
        return SplitEvaluation(math.nan, math.nan, 0)
    images, labels = split.tensors()
    images = images.to(_param_dtype(bundle))
    loss_sum, correct = 0.0, 0
    for start in range(0, len(split), batch_size):
        X, y = images[start:start + batch_size], labels[start:start + batch_size]
        logits = predict_logits(bundle, X)
        streams = logits.permute(1, 0, 2)
        loss = fused_ce(streams, y) if mode == "fused" else classifier_ce(streams, y)
        loss_sum += float(loss) * len(y)
        correct += int((fuse_matrix(logits)[0] == y).sum())
    return SplitEvaluation(loss_sum / len(split), correct / len(split), len(split))


def train_epoch(state: TrainState, train_split: ImageSplit,
                val_split: Optional[ImageSplit] = None) -> EpochMetrics:
    """训练一个轮次：每个批次先更新分类器，再更新生成器"""
    if len(train_split) == 0:
        raise ValueError("训练集为空")
    bundle = state.bundle
    cfg = bundle.cfg
    epoch_index = state.epoch
    lr = lr_schedule(epoch_index, cfg.lr_clf, cfg.clf_lr_decay_factor, cfg.clf_lr_decay_every)
    set_lr(bundle.clf_optimizer, lr)

    train_split.set_epoch(epoch_index)
    shuffle = torch.Generator().manual_seed(state.seed * 100_003 + epoch_index)
    # 训练模式下单样本批次无法计算 BatchNorm 统计量
    drop_last = len(train_split) % cfg.batch_size == 1 and len(train_split) > 1
    loader = DataLoader(train_split, batch_size=cfg.batch_size, shuffle=True,
                        generator=shuffle, num_workers=0, drop_last=drop_last)

    dtype = _param_dtype(bundle)
    n_seen, n_batches, correct = 0, 0, 0
    clf_sum, gen_sum = 0.0, 0.0
    for X, y, _ in loader:
        X = X.to(dtype)
        clf_loss, logits_all = classifier_step(state, X, y)
        breakdowns = generator_step(state, X, y)
        state.step += 1

        b = len(y)
        n_seen += b
        n_batches += 1
        clf_sum += clf_loss * b
        if breakdowns:
            gen_sum += b * sum(float(p.total) for p in breakdowns) / len(breakdowns)
        correct += int((fuse_matrix(logits_all.permute(1, 0, 2))[0] == y).sum())

    if val_split is not None and len(val_split) > 0:
        val = evaluate_split(bundle, val_split, cfg.eval_batch_size, cfg.val_loss_mode)
        val_loss, val_acc = val.loss, val.accuracy
    else:
        # 没有验证集时用训练损失判断早停
        val_loss, val_acc = clf_sum / n_seen, correct / n_seen
    check_finite(state, torch.tensor(val_loss), "val_loss")

    state.epoch += 1
    metrics = EpochMetrics(
        epoch=state.epoch,
        train_loss_clf=clf_sum / n_seen,
        mean_gen_total=gen_sum / n_seen if bundle.uses_generators else 0.0,
        val_loss=val_loss,
        val_acc=val_acc,
        lr_clf=lr,
        train_acc=correct / n_seen,
        n_batches=n_batches,
    )
    state.history.append(metrics)
    return metrics


def _notify(listeners: Sequence[EventListener], event: RunEvent) -> None:
    for listener in listeners:
        listener.on_event(event)


def run_fold(cfg: TrainConfig, ds: Dataset, fold: Fold, fold_number: int,
             out_dir: Optional[Path] = None,
             listeners: Sequence[EventListener] = ()) -> FoldResult:
    """训练一折并在最佳检查点上测试，fold_number 从 1 开始"""
    source = f"fold_{fold_number}"
    fold_dir = Path(out_dir) / source if out_dir is not None else None
    seed = cfg.seed + fold_number
    bundle = build_bundle(cfg, seed=seed)
    state = TrainState(bundle, seed=seed, dump_dir=fold_dir, fold=fold_number,
                       listeners=tuple(listeners))

    train_split = ImageSplit(ds, fold.train_ids, cfg.augment, seed=seed)
    val_split = ImageSplit(ds, fold.val_ids)
    logger.info("%s: 训练 %d / 验证 %d / 测试 %d", source,
                len(fold.train_ids), len(fold.val_ids), len(fold.test_ids))

    monitor = PerformanceMonitor()
    for _ in range(cfg.epochs):
        monitor.start()
        metrics = train_epoch(state, train_split, val_split)
        perf = monitor.stop(source, batch_size=len(train_split))
        stop = early_stop_check(state)
        if state.improved:
            state.best_tensors = bundle.named_tensors()
            state.best_optimizers = copy.deepcopy(bundle.optimizer_state())
        _notify(listeners, EpochCompleteEvent(source, fold=fold_number, metrics=metrics.to_row()))
        _notify(listeners, perf)
        _notify(listeners, ProgressEvent(source, state.epoch / cfg.epochs, f"轮 {state.epoch}"))
        if stop:
            logger.info("%s: 第 %d 轮早停，最佳轮次 %d", source, state.epoch, state.best_epoch)
            break

    if fold_dir is not None:
        save_weights(bundle, fold_dir / "last.ckpt", epoch=state.epoch,
                     val_loss=state.history[-1].val_loss)
    bundle.load_named_tensors(state.best_tensors)
    bundle.load_optimizer_state(state.best_optimizers)
    bundle.epoch, bundle.val_loss = state.best_epoch, state.best_val_loss
    if fold_dir is not None:
        save_weights(bundle, fold_dir / "best.ckpt")

    records = predict_split(bundle, ds, fold.test_ids, cfg.eval_batch_size)
    result = FoldResult(
        fold=fold_number,
        best_epoch=state.best_epoch,
        val_loss=state.best_val_loss,
        test_accuracy=accuracy(records),
        confusion=confusion(records, ds.class_names),
        mean_confidences=[mean_confidence(records, k) for k in range(ds.n_classes)],
        history=list(state.history),
        predictions=records,
    )
    logger.info("%s: 测试准确率 %.4f", source, result.test_accuracy)
    return result


def run_experiment(cfg: TrainConfig, ds: Dataset, folds: FoldSplits,
                   out_dir: Optional[Path] = None,
                   listeners: Sequence[EventListener] = ()) -> ExperimentResult:
    """按折训练与测试；某折数值发散时记为失败，其余折继续"""
    if ds.n_classes != cfg.n_classes:
        raise ConfigError(f"n_classes={cfg.n_classes} 与数据集类别数 {ds.n_classes} 不一致")
    seed_everything(cfg.seed)
    per_fold: List[FoldResult] = []
    for number, fold in enumerate(folds.folds, start=1):
        try:
            result = run_fold(cfg, ds, fold, number, out_dir, listeners)
        except DivergenceError as e:
            logger.error("fold_%d 失败: %s", number, e)
            result = FoldResult(fold=number, failed=True, error=str(e),
                                mean_confidences=[None] * ds.n_classes)
        _notify(listeners, FoldCompleteEvent(f"fold_{number}", fold=number,
                                             best_epoch=result.best_epoch,
                                             test_accuracy=result.test_accuracy,
                                             failed=result.failed))
        per_fold.append(result)
    return ExperimentResult(per_fold, cfg.lambda_, config_digest(cfg), cfg.setup_label(),
                            list(ds.class_names))
