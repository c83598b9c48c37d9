"""
单步更新：先更新分类器，再更新生成器

分类器步中变换图像视为常量，梯度不进入生成器；生成器步中分类器参数
不参与更新，但梯度穿过分类器回传给对应的生成器。
"""

import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import torch

from ..errors import DivergenceError
from ..events.events import GeneratorStepEvent
from ..losses import LossBreakdown, as_label_batch, classifier_ce, generator_loss
from ..nets.classifier import ClassifierNet
from .state import TrainState

logger = logging.getLogger(__name__)


def transformed_streams(bundle, X: torch.Tensor) -> List[torch.Tensor]:
    """每个生成器对 X 的变换；没有生成器时只有 X 本身"""
    if not bundle.uses_generators:
        return [X]
    return [g(X) for g in bundle.generators]


@contextmanager
def frozen(module: torch.nn.Module) -> Iterator[None]:
    """暂时关闭模块参数的 requires_grad，退出时恢复原状态"""
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)


def _dump_divergence(state: TrainState, what: str, value: float) -> Optional[Path]:
    if state.dump_dir is None:
        return None
    state.dump_dir.mkdir(parents=True, exist_ok=True)
    path = state.dump_dir / f"divergence_epoch{state.epoch + 1}_step{state.step}.pt"
    diagnostics = {
        "loss": what,
        "value": repr(value),
        "epoch": state.epoch + 1,
        "step": state.step,
        "history": [m.to_row() for m in state.history],
    }
    torch.save({"tensors": state.bundle.named_tensors(),
                "diagnostics": json.dumps(diagnostics, ensure_ascii=False)}, path)
    return path


def check_finite(state: TrainState, loss: torch.Tensor, what: str) -> None:
    """损失出现 NaN/Inf 时写出诊断文件并中止实验"""
    if torch.isfinite(loss).all():
        return
    value = float(loss.detach())
    path = _dump_divergence(state, what, value)
    logger.error("轮 %d 第 %d 步 %s 数值发散: %r", state.epoch + 1, state.step, what, value)
    raise DivergenceError(
        f"{what} 在第 {state.epoch + 1} 轮第 {state.step} 步出现非有限值 {value!r}", path
    )


def classifier_step(state: TrainState, X: torch.Tensor,
                    labels: torch.Tensor) -> Tuple[float, torch.Tensor]:
    """一次分类器更新，返回损失值与各流 logits (S, B, N)"""
    if X.shape[0] == 0:
        raise ValueError("批次为空")
    bundle = state.bundle
    bundle.train()
    with torch.no_grad():
        streams = transformed_streams(bundle, X)
    logits_all = torch.stack([bundle.classifier(s) for s in streams])
    loss = classifier_ce(logits_all, labels)
    check_finite(state, loss, "classifier_ce")

    bundle.clf_optimizer.zero_grad(set_to_none=True)
    loss.backward()
    bundle.clf_optimizer.step()
    return float(loss.detach()), logits_all.detach()


def generator_step(state: TrainState, X: torch.Tensor,
                   labels: torch.Tensor) -> List[LossBreakdown]:
    """每个生成器各更新一次

    相似项覆盖整个批次，交叉熵项只包含真实类别为 k 的样本。每次更新向
    state.listeners 发出一个 GeneratorStepEvent，step 为本批次的全局步号。
    """
    if X.shape[0] == 0:
        raise ValueError("批次为空")
    bundle = state.bundle
    if not bundle.uses_generators:
        return []
    cfg = bundle.cfg
    batch = as_label_batch(labels, bundle.n_classes)
    bundle.train()
    classifier: ClassifierNet = bundle.classifier

    breakdowns: List[LossBreakdown] = []
    with frozen(classifier):
        for k, (generator, optimizer) in enumerate(zip(bundle.generators, bundle.gen_optimizers)):
            Xp = generator(X)
            parts = generator_loss(X, Xp, classifier(Xp), batch, k, cfg.lambda_,
                                   bundle.perceptual, cfg.perceptual_weight)
            check_finite(state, parts.total, f"generator_loss[{k}]")
            optimizer.zero_grad(set_to_none=True)
            parts.total.backward()
            optimizer.step()
            record = LossBreakdown(
                parts.l_mse.detach(), parts.l_perceptual.detach(), parts.l_ce_routed.detach(),
                parts.lambda_, parts.total.detach(), k, parts.perceptual_weight,
            )
            breakdowns.append(record)
            event = GeneratorStepEvent(f"fold_{state.fold}", fold=state.fold,
                                       metrics=record.to_row(state.step))
            for listener in state.listeners:
                listener.on_event(event)
    return breakdowns
