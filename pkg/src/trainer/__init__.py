"""
训练模块：交替更新、学习率衰减、早停、交叉验证实验与 lambda 网格搜索
"""

from .loop import early_stop_check, evaluate_split, lr_schedule, run_experiment, run_fold, train_epoch
from .state import EpochMetrics, ExperimentResult, FoldResult, TrainState, seed_everything
from .steps import classifier_step, generator_step
from .sweep import SweepResult, lambda_sweep, select_best

__all__ = [
    'early_stop_check', 'evaluate_split', 'lr_schedule', 'run_experiment', 'run_fold', 'train_epoch',
    'EpochMetrics', 'ExperimentResult', 'FoldResult', 'TrainState', 'seed_everything',
    'classifier_step', 'generator_step',
    'SweepResult', 'lambda_sweep', 'select_best',
]
