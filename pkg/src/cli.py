"""
命令行入口

    fucitnet train   --config cfg.json --override lambda=0.05 --out runs/catdog
    fucitnet sweep   --config cfg.json --jobs 4 --out runs/sweep
    fucitnet eval    --checkpoint runs/catdog/fold_3/best.ckpt --data data/ \
                     --manifest runs/catdog/folds.json --fold 3 --split test
    fucitnet transform --checkpoint best.ckpt img1.png img2.png --out dumps/
    fucitnet synth   --out data/synth
    fucitnet fuse-offline logits.csv
    fucitnet compare runs/a runs/b --out table.csv

退出码: 0 成功, 1 参数或配置错误, 2 数据错误, 3 数值发散。
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import TrainConfig, apply_overrides, load_config, to_flat_dict
from .data.dataset import Dataset, decode_image, load_dataset, write_dataset
from .data.folds import FoldSplits, make_folds
from .data.synth import synth_dataset
from .errors import ConfigError, DataError, DivergenceError, FucitError
from .evalreport.metrics import accuracy, confusion, mean_confidence
from .evalreport.report import compare_runs, dump_transforms, emit_report
from .events.listener import LOSSES_FILE, LoggingEventListener, MetricsCsvListener, loss_csv_listener
from .events.performance import PerformanceEventListener
from .fusion import fuse_offline, predict_split, records_to_frame
from .nets.bundle import load_weights
from .trainer.loop import run_experiment
from .trainer.sweep import BEST_POINTER_FILE, lambda_sweep

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """参数错误抛出 ConfigError，由 main 统一转换为退出码 1"""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def _experiment_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config, args.override)
    if args.seed is not None:
        cfg = apply_overrides(cfg, {"seed": args.seed})
    if getattr(args, "data", None):
        cfg = apply_overrides(cfg, {"data_root": args.data})
    return cfg


def _check_synth_size(cfg: TrainConfig) -> None:
    # 写出的合成图像会按 image_size 重新读取，两者必须一致
    if tuple(cfg.synth.size) != (cfg.image_size, cfg.image_size):
        raise ConfigError(
            f"synth.size={list(cfg.synth.size)} 与 image_size={cfg.image_size} 不一致"
        )


def _dataset_for(cfg: TrainConfig) -> Dataset:
    """有 data_root 时读取目录，否则按 synth.* 生成合成数据"""
    if cfg.data_root:
        ds = load_dataset(cfg.data_root, cfg.image_size)
    else:
        _check_synth_size(cfg)
        if cfg.synth.n_classes != cfg.n_classes:
            raise ConfigError(
                f"synth.n_classes={cfg.synth.n_classes} 与 n_classes={cfg.n_classes} 不一致"
            )
        ds = synth_dataset(cfg.synth, seed=cfg.seed)
    if ds.n_classes != cfg.n_classes:
        raise ConfigError(f"n_classes={cfg.n_classes} 与数据集类别数 {ds.n_classes} 不一致")
    return ds


def _folds_for(cfg: TrainConfig, ds: Dataset) -> FoldSplits:
    return make_folds(ds, cfg.n_folds, cfg.seed, cfg.test_fraction, cfg.val_fraction)


def _write_config(cfg: TrainConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(to_flat_dict(cfg), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    ds = _dataset_for(cfg)
    folds = _folds_for(cfg, ds)
    _write_config(cfg, out)
    folds.save(out / "folds.json")

    perf = PerformanceEventListener()
    listeners = [LoggingEventListener(), MetricsCsvListener(out / "metrics.csv"),
                 loss_csv_listener(out / LOSSES_FILE), perf]
    result = run_experiment(cfg, ds, folds, out, listeners)
    for source in sorted(perf.metrics):
        stats = perf.get_statistics(source)
        logger.info("%s: 训练耗时 %.1f秒, 平均 %.1f 张图像/秒", source,
                    stats["total_time"], stats["avg_throughput"])
    emit_report(result, out)
    print(f"{result.setup_label}: 平均准确率 "
          f"{'-' if result.mean_accuracy is None else f'{result.mean_accuracy:.4f}'}")
    if result.failed:
        print(f"有 {sum(f.failed for f in result.per_fold)} 折数值发散，详见 {out}", file=sys.stderr)
        return DivergenceError.exit_code
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    ds = _dataset_for(cfg)
    folds = _folds_for(cfg, ds)
    _write_config(cfg, out)
    folds.save(out / "folds.json")

    sweep = lambda_sweep(cfg, ds, folds, jobs=args.jobs, out_dir=out,
                         listeners=[LoggingEventListener()])
    for result in sweep.results:
        acc = "-" if result.mean_accuracy is None else f"{result.mean_accuracy:.4f}"
        print(f"lambda={result.lambda_:g}\t{acc}")
    print(f"最佳 lambda={sweep.best_lambda:g}，见 {out / BEST_POINTER_FILE}")
    return 0


def _eval_ids(args: argparse.Namespace, ds: Dataset) -> List[str]:
    if args.manifest is None:
        return [s.image_id for s in ds.samples]
    splits = FoldSplits.load(args.manifest)
    if not 1 <= args.fold <= len(splits):
        raise ConfigError(f"--fold 必须在 1..{len(splits)} 内，当前值: {args.fold}")
    return splits.folds[args.fold - 1].ids(args.split)


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_weights(args.checkpoint)
    cfg = bundle.cfg
    data_root = args.data or cfg.data_root
    if not data_root:
        raise ConfigError("eval 需要 --data 或配置中的 data_root")
    ds = load_dataset(data_root, cfg.image_size)
    if ds.n_classes != bundle.n_classes:
        raise ConfigError(f"检查点类别数 {bundle.n_classes} 与数据集类别数 {ds.n_classes} 不一致")

    ids = _eval_ids(args, ds)
    if not ids:
        raise DataError(f"要评估的图像为空（--fold {args.fold} --split {args.split}）")
    records = predict_split(bundle, ds, ids, cfg.eval_batch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records_to_frame(records).to_csv(out / "predictions.csv", index=False, lineterminator="\n")
    cm = confusion(records, ds.class_names)
    cm.to_csv(out / "confusion.csv")
    acc = accuracy(records)
    metrics = {
        "accuracy": acc,
        "n": len(records),
        "mean_confidences": [mean_confidence(records, k) for k in range(ds.n_classes)],
        "class_names": ds.class_names,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    print(f"准确率 {acc:.4f} ({len(records)} 张图像)")
    return 0


def _transform_ids(paths: List[Path]) -> List[str]:
    """相对于公共父目录的路径，不同目录下的同名文件得到不同的 id"""
    resolved = [p.resolve() for p in paths]
    base = Path(os.path.commonpath([p.parent for p in resolved]))
    return [p.relative_to(base).as_posix() for p in resolved]


def cmd_transform(args: argparse.Namespace) -> int:
    bundle = load_weights(args.checkpoint)
    size = (bundle.cfg.image_size, bundle.cfg.image_size)
    paths = [Path(p) for p in args.images]
    if not paths:
        raise ConfigError("transform 至少需要一个图像文件")
    images = torch.from_numpy(np.stack([decode_image(p, size) for p in paths]))
    written = dump_transforms(bundle, images, _transform_ids(paths), args.out, panel=args.panel)
    print(f"已写出 {len(written)} 个文件到 {args.out}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    _check_synth_size(cfg)
    ds = synth_dataset(cfg.synth, seed=cfg.seed)
    root = write_dataset(ds, args.out)
    print(f"已生成 {len(ds)} 张图像 ({ds.n_classes} 类) 到 {root}")
    return 0


def cmd_fuse_offline(args: argparse.Namespace) -> int:
    frame = fuse_offline(args.logits, args.n_classes)
    if args.out:
        frame.to_csv(args.out, index=False, lineterminator="\n")
    print(frame.to_csv(index=False, lineterminator="\n"), end="")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    frame = compare_runs(args.runs, args.out)
    print(frame.to_string(index=False))
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "transform": cmd_transform,
    "synth": cmd_synth,
    "fuse-offline": cmd_fuse_offline,
    "compare": cmd_compare,
}


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日志级别")

    experiment = ArgumentParser(add_help=False)
    experiment.add_argument("--config", help="扁平 JSON 配置文件")
    experiment.add_argument("--override", action="append", default=[], metavar="K=V",
                            help="覆盖配置项，可重复")
    experiment.add_argument("--seed", type=int, help="全局随机种子")
    experiment.add_argument("--data", help="数据集目录 root/<类别>/<图像>，缺省时使用合成数据")

    parser = ArgumentParser(prog="fucitnet", description="类别专属变换网络的训练与推理")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, experiment], help="交叉验证训练一个配置")
    p.add_argument("--out", default="runs/train", help="输出目录")

    p = sub.add_parser("sweep", parents=[common, experiment], help="lambda 网格搜索")
    p.add_argument("--out", default="runs/sweep", help="输出目录")
    p.add_argument("--jobs", type=int, default=1, help="并行进程数，1 为确定性的单进程模式")

    p = sub.add_parser("eval", parents=[common], help="用检查点评估数据集或其中一个划分")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="数据集目录，缺省时使用检查点配置中的 data_root")
    p.add_argument("--manifest", help="folds.json")
    p.add_argument("--fold", type=int, default=1, help="折编号，从 1 开始")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", default="runs/eval")

    p = sub.add_parser("transform", parents=[common], help="导出生成器变换后的图像")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+", help="图像文件")
    p.add_argument("--out", default="runs/transform")
    p.add_argument("--panel", action="store_true", help="同时绘制对比图")

    p = sub.add_parser("synth", parents=[common, experiment], help="生成合成数据集目录")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse-offline", parents=[common], help="融合外部 logit CSV")
    p.add_argument("logits", help="每行 N*N 个 logits 的 CSV")
    p.add_argument("--n-classes", type=int, help="类别数，缺省时由列数推断")
    p.add_argument("--out", help="结果 CSV")

    p = sub.add_parser("compare", parents=[common], help="汇总多个实验目录")
    p.add_argument("runs", nargs="+", help="包含 summary.json 的实验目录")
    p.add_argument("--out", help="结果 CSV")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=getattr(logging, args.log_level),
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )
        return COMMANDS[args.command](args)
    except FucitError as e:
        print(f"错误: {e}", file=sys.stderr)
        if isinstance(e, DivergenceError) and e.dump_path is not None:
            print(f"诊断文件: {e.dump_path}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
