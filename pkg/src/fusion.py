"""
推理融合

输入 X 广播到每个生成器，分类器对 N 张变换图像分别给出 N 维 logits，
按生成器顺序拼接成 N*N 维向量，取 argmax 再对 N 取模得到最终类别。
拼接在 logit 域进行，融合前不做 softmax；并列时取最小的拼接下标。
"""

import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from .data.dataset import Dataset, ImageSplit
from .errors import DataError
from .events.listener import EventListener
from .operators.fuse import FuseOperator
from .operators.map import MapLikeOperator
from .pipeline import Pipeline

logger = logging.getLogger(__name__)


@dataclass
class PredictionRecord:
    """一张图像的推理结果，logits[k] 是第 k 个变换流的 N 维 logits"""
    image_id: str
    logits: List[List[float]]
    fused_class: int
    winning_logit: float
    truth: Optional[int] = None

    @property
    def correct(self) -> bool:
        return self.truth is not None and self.truth == self.fused_class


def fuse(logit_vectors: Sequence[Sequence[float]]) -> Tuple[int, float]:
    """对 N 个长度为 N 的 logit 向量做拼接 argmax mod N"""
    n = len(logit_vectors)
    if n == 0 or any(len(v) != n for v in logit_vectors):
        raise ValueError(f"需要 N 个长度为 N 的向量，当前长度: {[len(v) for v in logit_vectors]}")
    flat = np.asarray(logit_vectors, dtype=np.float64).reshape(-1)
    i = int(np.argmax(flat))  # 并列时返回第一个
    return i % n, float(flat[i])


def fuse_matrix(logits: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """批量融合，logits 形状 (B, S, N)，返回 (类别, 获胜 logit)"""
    b, s, n = logits.shape
    flat = logits.reshape(b, s * n)
    winning = flat.max(dim=1).values
    # max 的并列规则不保证，取第一个等于最大值的位置
    index = (flat == winning.unsqueeze(1)).to(torch.int64).argmax(dim=1)
    return index % n, winning


def stream_logits(bundle, k: int, X: torch.Tensor) -> torch.Tensor:
    """第 k 个变换流的 logits；没有生成器时是分类器对原图的 logits"""
    if bundle.uses_generators:
        return bundle.classifier(bundle.generators[k](X))
    return bundle.classifier(X)


def stream_count(bundle) -> int:
    return len(bundle.generators) if bundle.uses_generators else 1


def _stack_streams(branches: List[torch.Tensor]) -> torch.Tensor:
    return torch.stack(branches, dim=1)


def build_inference_pipeline(bundle, X: torch.Tensor,
                             listeners: Sequence[EventListener] = ()) -> Pipeline:
    """输入 -> 每个生成器一个分支 -> 汇合"""
    pipe = Pipeline("fucitnet_inference", listeners)
    pipe.source("input", iter([X]))
    pipe.branch(*[MapLikeOperator(f"stream_{k}", partial(stream_logits, bundle, k))
                  for k in range(stream_count(bundle))])
    return pipe.join(FuseOperator("fuse", _stack_streams))


def predict_logits(bundle, X: torch.Tensor, listeners: Sequence[EventListener] = ()) -> torch.Tensor:
    """推理模式下的 (B, S, N) logits"""
    bundle.eval()
    with torch.no_grad():
        return build_inference_pipeline(bundle, X, listeners).execute()["fuse"]


def predict_batch(bundle, X: torch.Tensor, ids: Sequence[str],
                  truths: Optional[Sequence[int]] = None,
                  listeners: Sequence[EventListener] = ()) -> List[PredictionRecord]:
    """对一批图像推理并融合，记录顺序与输入一致"""
    n = bundle.n_classes
    if bundle.uses_generators and len(bundle.generators) != n:
        raise ValueError(f"生成器数量 {len(bundle.generators)} 与类别数 {n} 不一致")
    if len(ids) != X.shape[0]:
        raise ValueError(f"ids 数量 {len(ids)} 与批大小 {X.shape[0]} 不一致")
    if truths is not None:
        truths = [int(t) for t in truths]
        if len(truths) != len(ids) or any(not 0 <= t < n for t in truths):
            raise ValueError(f"真实标签数量或取值与类别数 {n} 不一致")

    logits = predict_logits(bundle, X, listeners)
    if logits.shape[-1] != n:
        raise ValueError(f"分类器输出宽度 {logits.shape[-1]} 与类别数 {n} 不一致")
    return records_from_logits(logits, ids, truths)


def records_from_logits(logits: torch.Tensor, ids: Sequence[str],
                        truths: Optional[Sequence[int]] = None) -> List[PredictionRecord]:
    """(B, S, N) logits -> 预测记录"""
    classes, winning = fuse_matrix(logits)
    return [
        PredictionRecord(
            image_id=str(image_id),
            logits=logits[i].tolist(),
            fused_class=int(classes[i]),
            winning_logit=float(winning[i]),
            truth=None if truths is None else truths[i],
        )
        for i, image_id in enumerate(ids)
    ]


def records_to_frame(records: Sequence[PredictionRecord]) -> pd.DataFrame:
    """预测导出表，logit_k_c 按拼接顺序排列"""
    rows = []
    for r in records:
        row = {"image_id": r.image_id, "truth": r.truth,
               "fused_class": r.fused_class, "winning_logit": r.winning_logit}
        for k, vector in enumerate(r.logits):
            for c, value in enumerate(vector):
                row[f"logit_{k}_{c}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def fuse_offline(path: Union[str, Path], n_classes: Optional[int] = None) -> pd.DataFrame:
    """对外部 logit CSV 逐行融合

    有表头时使用 logit_* 列（没有则使用全部数值列）；没有表头时每行全部是 logits。
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"找不到 logit 文件: {path}")
    first = path.read_text(encoding="utf-8").splitlines()[:1]
    if not first:
        raise DataError(f"logit 文件为空: {path}")
    try:
        [float(v.replace("−", "-")) for v in first[0].split(",")]
        has_header = False
    except ValueError:
        has_header = True

    try:
        frame = pd.read_csv(path, header=0 if has_header else None)
    except ValueError as e:
        raise DataError(f"无法解析 logit 文件 {path}: {e}")
    if has_header:
        cols = [c for c in frame.columns if str(c).startswith("logit_")]
        if not cols:
            cols = [c for c in frame.columns if pd.api.types.is_numeric_dtype(frame[c])]
    else:
        cols = list(frame.columns)
    try:
        values = frame[cols].apply(
            lambda col: pd.to_numeric(col.astype(str).str.replace("−", "-"), errors="raise")
        ).to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataError(f"logit 文件 {path} 含有非数值内容: {e}")
    if values.size == 0:
        raise DataError(f"logit 文件中没有可融合的数值列: {path}")
    if not np.isfinite(values).all():
        raise DataError(f"logit 文件 {path} 含有缺失值或非有限值")

    width = values.shape[1]
    n = n_classes or int(round(width ** 0.5))
    if n * n != width:
        raise DataError(f"每行 logits 数量 {width} 不是 N*N (N={n})")
    results = [fuse(row.reshape(n, n).tolist()) for row in values]
    out = pd.DataFrame(results, columns=["fused_class", "winning_logit"])
    if has_header and "image_id" in frame.columns:
        out.insert(0, "image_id", frame["image_id"].astype(str))
    return out


def predict_split(bundle, ds: Dataset, image_ids: Sequence[str], batch_size: int = 64,
                  listeners: Sequence[EventListener] = ()) -> List[PredictionRecord]:
    """对数据集中的一组图像分批推理，不做数据增强"""
    split = ImageSplit(ds, image_ids)
    images, labels = split.tensors()
    dtype = next(bundle.classifier.parameters()).dtype
    records: List[PredictionRecord] = []
    for start in range(0, len(split), batch_size):
        stop = start + batch_size
        records += predict_batch(bundle, images[start:stop].to(dtype), split.image_ids[start:stop],
                                 labels[start:stop].tolist(), listeners)
    logger.debug("完成 %d 张图像的推理", len(records))
    return records
