"""
损失函数

- classifier_ce: 分类器损失，对 N 个变换流的交叉熵求和，按批大小平均
- pixel_mse / perceptual_mse: 相似项，对批、通道和空间位置取平均
- routed_ce: 生成器 k 只接收真实类别为 k 的样本的交叉熵
- generator_loss: L_gen_k = l_mse + 0.006 * l_perceptual + lambda * routed_ce
"""

from dataclasses import dataclass
from typing import Dict, Union

import torch
import torch.nn.functional as F

from .nets.perceptual import PerceptualNet

PERCEPTUAL_WEIGHT = 0.006


@dataclass
class LabelBatch:
    """一批真实标签及其 one-hot 形式"""
    labels: torch.Tensor
    n_classes: int

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels, dtype=torch.long).reshape(-1)
        if self.labels.numel() == 0:
            raise ValueError("标签批次不能为空")
        if int(self.labels.min()) < 0 or int(self.labels.max()) >= self.n_classes:
            raise ValueError(
                f"标签必须在 [0,{self.n_classes}) 内，当前范围: "
                f"[{int(self.labels.min())}, {int(self.labels.max())}]"
            )

    @property
    def one_hot(self) -> torch.Tensor:
        return F.one_hot(self.labels, self.n_classes)

    def __len__(self) -> int:
        return self.labels.numel()


def as_label_batch(labels: Union[LabelBatch, torch.Tensor], n_classes: int) -> LabelBatch:
    if isinstance(labels, LabelBatch):
        if labels.n_classes != n_classes:
            raise ValueError(f"标签类别数 {labels.n_classes} 与 logits 宽度 {n_classes} 不一致")
        return labels
    return LabelBatch(labels, n_classes)


@dataclass
class LossBreakdown:
    """生成器 k 一步的损失分解，各字段为 0 维张量，total 可以直接反向传播"""
    l_mse: torch.Tensor
    l_perceptual: torch.Tensor
    l_ce_routed: torch.Tensor
    lambda_: float
    total: torch.Tensor
    generator_index: int
    perceptual_weight: float = PERCEPTUAL_WEIGHT

    def to_row(self, step: int) -> Dict[str, float]:
        """导出一行 CSV 记录"""
        return {
            "step": step,
            "k": self.generator_index,
            "l_mse": float(self.l_mse),
            "l_perceptual": float(self.l_perceptual),
            "l_ce_routed": float(self.l_ce_routed),
            "lambda": self.lambda_,
            "total": float(self.total),
        }


def _check_same_shape(X: torch.Tensor, Xp: torch.Tensor) -> None:
    if X.shape != Xp.shape:
        raise ValueError(f"形状不一致: {tuple(X.shape)} != {tuple(Xp.shape)}")


def pixel_mse(X: torch.Tensor, Xp: torch.Tensor) -> torch.Tensor:
    """逐像素平方差，对批、通道、H、W 取平均"""
    _check_same_shape(X, Xp)
    return ((X - Xp) ** 2).mean()


def perceptual_mse(pnet: PerceptualNet, X: torch.Tensor, Xp: torch.Tensor) -> torch.Tensor:
    """phi_j 特征空间中的平方差，对批、特征通道、H_j、W_j 取平均"""
    _check_same_shape(X, Xp)
    return pixel_mse(pnet(X), pnet(Xp))


def classifier_ce(logits_all: torch.Tensor, labels: Union[LabelBatch, torch.Tensor]) -> torch.Tensor:
    """logits_all 形状 (S, B, N)，对 S 个流的交叉熵求和，按 B 平均"""
    if logits_all.dim() != 3:
        raise ValueError(f"logits_all 必须是 (流数, B, N)，当前形状: {tuple(logits_all.shape)}")
    batch = as_label_batch(labels, logits_all.shape[-1])
    log_probs = F.log_softmax(logits_all, dim=-1)
    picked = log_probs.gather(-1, batch.labels.view(1, -1, 1).expand(logits_all.shape[0], -1, 1))
    return -picked.sum() / len(batch)


def routed_ce(logits_k: torch.Tensor, labels: Union[LabelBatch, torch.Tensor], k: int) -> torch.Tensor:
    """第 k 个流的交叉熵，只统计真实类别为 k 的样本，仍按整个批大小 B 平均"""
    if logits_k.dim() != 2:
        raise ValueError(f"logits_k 必须是 (B, N)，当前形状: {tuple(logits_k.shape)}")
    n = logits_k.shape[-1]
    if not 0 <= k < n:
        raise ValueError(f"生成器下标 k 必须在 [0,{n}) 内，当前值: {k}")
    batch = as_label_batch(labels, n)
    mask = (batch.labels == k).to(logits_k.dtype)
    log_probs = F.log_softmax(logits_k, dim=-1)[:, k]
    return -(mask * log_probs).sum() / len(batch)


def fused_ce(logits_all: torch.Tensor, labels: Union[LabelBatch, torch.Tensor]) -> torch.Tensor:
    """融合交叉熵：对 N*N 个拼接 logits 做 softmax，取映射到真实类别的概率质量"""
    s, b, n = logits_all.shape
    batch = as_label_batch(labels, n)
    flat = logits_all.permute(1, 0, 2)  # (B, S, N)
    log_z = torch.logsumexp(flat.reshape(b, s * n), dim=-1)
    true_cols = flat.gather(-1, batch.labels.view(-1, 1, 1).expand(b, s, 1)).squeeze(-1)
    return (log_z - torch.logsumexp(true_cols, dim=-1)).mean()


def generator_loss(X: torch.Tensor, Xp_k: torch.Tensor, logits_k: torch.Tensor,
                   labels: Union[LabelBatch, torch.Tensor], k: int, lambda_: float,
                   pnet: PerceptualNet, perceptual_weight: float = PERCEPTUAL_WEIGHT) -> LossBreakdown:
    """生成器 k 的组合损失"""
    if lambda_ < 0:
        raise ValueError(f"lambda 必须 >= 0，当前值: {lambda_}")
    l_mse = pixel_mse(X, Xp_k)
    l_perceptual = perceptual_mse(pnet, X, Xp_k)
    l_ce = routed_ce(logits_k, labels, k)
    total = l_mse + perceptual_weight * l_perceptual + lambda_ * l_ce
    return LossBreakdown(l_mse, l_perceptual, l_ce, float(lambda_), total, k, perceptual_weight)
