"""
执行器模块
"""

from .base import Executor, SequentialExecutor
from .parallel import ProcessExecutor

__all__ = ['Executor', 'SequentialExecutor', 'ProcessExecutor']
