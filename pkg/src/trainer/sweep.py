"""
lambda 网格搜索

每个 lambda 独立运行一次完整的交叉验证实验，按平均测试准确率选出最佳值，
准确率相同时取较小的 lambda。
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from ..config import TrainConfig
from ..data.dataset import Dataset
from ..data.folds import FoldSplits
from ..errors import ConfigError, DivergenceError
from ..evalreport.report import emit_report
from ..events.listener import LOSSES_FILE, EventListener, loss_csv_listener
from ..executors.base import Executor, SequentialExecutor
from ..executors.parallel import ProcessExecutor
from .loop import run_experiment
from .state import ExperimentResult

logger = logging.getLogger(__name__)

BEST_POINTER_FILE = "best_lambda.json"


def lambda_dir_name(lambda_: float) -> str:
    return f"lambda_{lambda_:g}"


@dataclass
class SweepResult:
    best_lambda: float
    results: List[ExperimentResult]

    @property
    def best(self) -> ExperimentResult:
        return next(r for r in self.results if r.lambda_ == self.best_lambda)


def select_best(results: Sequence[ExperimentResult]) -> ExperimentResult:
    """平均准确率最高者，并列时取较小的 lambda"""
    scored = [r for r in results if r.mean_accuracy is not None]
    if not scored:
        raise DivergenceError("所有 lambda 的实验都失败了")
    return min(scored, key=lambda r: (-r.mean_accuracy, r.lambda_))


# 进程池要求任务函数可以被 pickle，因此放在模块顶层
def _run_lambda(task: Tuple[int, TrainConfig, Dataset, FoldSplits, Optional[Path],
                            Tuple[EventListener, ...]]) -> Tuple[int, ExperimentResult]:
    index, cfg, ds, folds, out_dir, listeners = task
    run_dir = out_dir / lambda_dir_name(cfg.lambda_) if out_dir is not None else None
    logger.info("开始 lambda=%g", cfg.lambda_)
    if run_dir is not None:
        listeners = (*listeners, loss_csv_listener(run_dir / LOSSES_FILE))
    result = run_experiment(cfg, ds, folds, run_dir, listeners)
    if run_dir is not None:
        emit_report(result, run_dir)
    return index, result


def lambda_sweep(cfg: TrainConfig, ds: Dataset, folds: FoldSplits,
                 lambdas: Optional[Sequence[float]] = None, jobs: int = 1,
                 out_dir: Optional[Path] = None,
                 listeners: Sequence[EventListener] = ()) -> SweepResult:
    """对 lambda 网格逐个运行实验

    jobs > 1 时使用进程池，结果按完成顺序返回后再按网格顺序排列；
    监听器只在单进程模式下生效。
    """
    grid = list(cfg.lambdas if lambdas is None else lambdas)
    if not grid:
        raise ConfigError("lambda 网格不能为空")
    if len(set(grid)) != len(grid):
        raise ConfigError(f"lambda 网格包含重复值: {grid}")
    out_dir = Path(out_dir) if out_dir is not None else None
    executor: Executor = ProcessExecutor(max_workers=jobs) if jobs > 1 else SequentialExecutor()
    shared = tuple(listeners) if jobs <= 1 else ()
    tasks = [(i, replace(cfg, lambda_=float(lam)), ds, folds, out_dir, shared)
             for i, lam in enumerate(grid)]
    by_index = dict(executor.map(_run_lambda, tasks))
    results = [by_index[i] for i in range(len(grid))]

    best = select_best(results)
    logger.info("最佳 lambda=%g，平均准确率 %.4f", best.lambda_, best.mean_accuracy)
    if out_dir is not None:
        pointer = {
            "lambda": best.lambda_,
            "directory": lambda_dir_name(best.lambda_),
            "mean_accuracy": best.mean_accuracy,
        }
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / BEST_POINTER_FILE).write_text(
            json.dumps(pointer, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return SweepResult(best.lambda_, results)
