"""
流水线算子模块
包含推理数据流中各类算子的实现
"""

from .base import PipelineOperator
from .source import SourceOperator
from .map import MapLikeOperator
from .fuse import FuseOperator

__all__ = [
    'PipelineOperator',
    'SourceOperator',
    'MapLikeOperator',
    'FuseOperator',
]
