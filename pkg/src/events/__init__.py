"""
事件系统模块
提供训练与推理事件定义和监听机制
"""

from .events import (
    RunEvent,
    OperatorStartEvent,
    OperatorCompleteEvent,
    ProgressEvent,
    EpochCompleteEvent,
    FoldCompleteEvent,
    GeneratorStepEvent,
)
from .listener import EventListener, LoggingEventListener, MetricsCsvListener, loss_csv_listener
from .performance import PerformanceMetricsEvent, PerformanceMonitor, PerformanceEventListener

__all__ = [
    'RunEvent',
    'OperatorStartEvent',
    'OperatorCompleteEvent',
    'ProgressEvent',
    'EpochCompleteEvent',
    'FoldCompleteEvent',
    'GeneratorStepEvent',
    'EventListener',
    'LoggingEventListener',
    'MetricsCsvListener',
    'loss_csv_listener',
    'PerformanceMetricsEvent',
    'PerformanceMonitor',
    'PerformanceEventListener',
]
