"""
结果输出

emit_report 写出的文件（同样的输入得到逐字节相同的内容，不含时间戳）:

    summary.json               实验汇总，键按字母排序
    fold_<i>_confusion.csv     表头为类别名，每行对应一个真实类别
    fold_<i>_metrics.csv       每轮指标
    fold_<i>_predictions.csv   测试集预测（logit_k_c 按拼接顺序）
    report.txt                 一页文本表格
"""

import json
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd
import torch
from PIL import Image

from ..data.dataset import to_uint8_hwc
from ..errors import DataError
from ..events.listener import METRICS_COLUMNS
from ..fusion import predict_batch, records_to_frame

if TYPE_CHECKING:
    from ..trainer.state import ExperimentResult, FoldResult

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"


def _clean(value: Any) -> Any:
    """NaN/Inf 写成 null"""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _fold_summary(fold: "FoldResult") -> Dict[str, Any]:
    return {
        "fold": fold.fold,
        "failed": fold.failed,
        "error": fold.error,
        "best_epoch": fold.best_epoch,
        "epochs_trained": fold.epochs_trained,
        "val_loss": fold.val_loss,
        "test_accuracy": fold.test_accuracy,
        "confusion": fold.confusion.to_list() if fold.confusion is not None else None,
        "mean_confidences": fold.mean_confidences,
    }


def summarize(result: "ExperimentResult") -> Dict[str, Any]:
    return _clean({
        "setup": result.setup_label,
        "lambda": result.lambda_,
        "config_digest": result.config_digest,
        "class_names": result.class_names,
        "n_folds": len(result.per_fold),
        "failed": result.failed,
        "mean_accuracy": result.mean_accuracy,
        "mean_confidences": result.mean_confidences(),
        "folds": [_fold_summary(f) for f in result.per_fold],
    })


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None or not math.isfinite(value) else f"{value:.{digits}f}"


def render_table(result: "ExperimentResult") -> str:
    """配置名、平均准确率与每类平均置信度"""
    header = ["Setup", "Accuracy", *[f"P_{name}" for name in result.class_names]]
    row = [result.setup_label, _fmt(result.mean_accuracy),
           *[_fmt(c) for c in result.mean_confidences()]]
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
        "  ".join(r.ljust(w) for r, w in zip(row, widths)),
        "",
    ]
    for f in result.per_fold:
        if f.failed:
            lines.append(f"fold {f.fold}: FAILED ({f.error})")
        else:
            lines.append(f"fold {f.fold}: accuracy {_fmt(f.test_accuracy, 4)}, "
                         f"best epoch {f.best_epoch}, val loss {_fmt(f.val_loss, 6)}")
    return "\n".join(lines) + "\n"


def emit_report(result: "ExperimentResult", out_dir: Union[str, Path]) -> List[Path]:
    """写出实验的全部结果文件，返回文件路径"""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        summary = out / SUMMARY_FILE
        summary.write_text(
            json.dumps(summarize(result), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        written.append(summary)
        for fold in result.per_fold:
            prefix = out / f"fold_{fold.fold}"
            if fold.confusion is not None:
                written.append(fold.confusion.to_csv(f"{prefix}_confusion.csv"))
            metrics = pd.DataFrame([{"fold": fold.fold, **m.to_row()} for m in fold.history],
                                   columns=METRICS_COLUMNS)
            metrics.to_csv(f"{prefix}_metrics.csv", index=False, lineterminator="\n")
            written.append(Path(f"{prefix}_metrics.csv"))
            if fold.predictions:
                records_to_frame(fold.predictions).to_csv(
                    f"{prefix}_predictions.csv", index=False, lineterminator="\n")
                written.append(Path(f"{prefix}_predictions.csv"))
        report = out / "report.txt"
        report.write_text(render_table(result), encoding="utf-8")
        written.append(report)
    except OSError as e:
        raise DataError(f"无法写入结果目录 {out}: {e}")
    logger.info("结果已写入 %s", out)
    return written


def _safe_name(image_id: str) -> str:
    return Path(image_id).with_suffix("").as_posix().replace("/", "_")


def _save_png(image: np.ndarray, path: Path) -> Path:
    Image.fromarray(to_uint8_hwc(image)).save(path)
    return path


def _render_panel(original: np.ndarray, transformed: List[np.ndarray],
                  logits: List[List[float]], path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams['font.sans-serif'] = ['DejaVu Sans', 'SimHei']
    plt.rcParams['axes.unicode_minus'] = False
    fig, axes = plt.subplots(1, 1 + len(transformed), figsize=(3 * (1 + len(transformed)), 3.4))
    axes = np.atleast_1d(axes)
    axes[0].imshow(to_uint8_hwc(original))
    axes[0].set_title("original")
    for k, (image, scores) in enumerate(zip(transformed, logits)):
        axes[k + 1].imshow(to_uint8_hwc(image))
        axes[k + 1].set_title(f"G{k}: " + ", ".join(f"{s:.3f}" for s in scores), fontsize=8)
    for ax in axes:
        ax.axis("off")
    plt.tight_layout()
    plt.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def dump_transforms(bundle, images: torch.Tensor, image_ids: Sequence[str],
                    out_dir: Union[str, Path], panel: bool = False) -> List[Path]:
    """写出原图与每个生成器的变换结果，以及各流 logits 的 CSV

    文件名由完整的 image_id 得到（"cat/1.png" -> cat_1_orig.png、cat_1_gen<k>.png），
    重名时追加序号。像素截断到 [0,1] 后保存为 8 位。
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dtype = next(bundle.classifier.parameters()).dtype
    X = torch.as_tensor(images).to(dtype)
    records = predict_batch(bundle, X, image_ids)
    with torch.no_grad():
        transformed = [g(X).cpu().numpy() for g in bundle.generators]

    written: List[Path] = []
    rows = []
    used: Set[str] = set()
    for i, record in enumerate(records):
        name = _safe_name(record.image_id)
        if name in used:
            name = f"{name}_{i}"
        used.add(name)
        original = X[i].cpu().numpy()
        written.append(_save_png(original, out / f"{name}_orig.png"))
        for k, batch in enumerate(transformed):
            written.append(_save_png(batch[i], out / f"{name}_gen{k}.png"))
        for k, vector in enumerate(record.logits):
            rows.append({"image_id": record.image_id, "stream": k,
                         **{f"logit_{c}": v for c, v in enumerate(vector)}})
        if panel:
            written.append(_render_panel(original, [b[i] for b in transformed], record.logits,
                                         out / f"{name}_panel.png"))
    sidecar = out / "transform_logits.csv"
    pd.DataFrame(rows).to_csv(sidecar, index=False, lineterminator="\n")
    written.append(sidecar)
    return written


def compare_runs(run_dirs: Sequence[Union[str, Path]],
                 out_path: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """汇总多个实验目录的 summary.json，每个实验一行"""
    rows = []
    for run_dir in run_dirs:
        path = Path(run_dir) / SUMMARY_FILE
        if not path.is_file():
            raise DataError(f"找不到实验汇总: {path}")
        summary = json.loads(path.read_text(encoding="utf-8"))
        row = {"run": Path(run_dir).name, "setup": summary["setup"],
               "lambda": summary["lambda"], "accuracy": summary["mean_accuracy"]}
        for name, conf in zip(summary["class_names"], summary["mean_confidences"]):
            row[f"P_{name}"] = conf
        rows.append(row)
    frame = pd.DataFrame(rows)
    if out_path is not None:
        frame.to_csv(out_path, index=False, lineterminator="\n")
    return frame
