"""
数据模块：数据集读取、交叉验证划分、数据增强与合成数据
"""

from .augment import AugmentPolicy, augment
from .dataset import Dataset, Sample, ImageSplit, decode_image, load_dataset, write_dataset
from .folds import Fold, FoldSplits, make_folds
from .synth import SynthSpec, synth_dataset

__all__ = [
    'AugmentPolicy', 'augment',
    'Dataset', 'Sample', 'ImageSplit', 'decode_image', 'load_dataset', 'write_dataset',
    'Fold', 'FoldSplits', 'make_folds',
    'SynthSpec', 'synth_dataset',
]
