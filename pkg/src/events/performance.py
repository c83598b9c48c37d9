"""
性能监控：训练轮次与推理算子的耗时、内存和 CPU

这些数值只进入日志和事件，不写入 summary.json 等需要可复现的结果文件。
"""

import logging
import os
import time
from dataclasses import dataclass
from typing import Dict, List

import psutil

from .events import RunEvent
from .listener import EventListener

logger = logging.getLogger(__name__)

_MB = 1024 * 1024


@dataclass
class PerformanceMetricsEvent(RunEvent):
    """一次计时的结果，batch_size 为处理的图像数"""
    start_time: float
    end_time: float
    memory_usage: float
    cpu_percent: float
    batch_size: int = 1

    @property
    def execution_time(self) -> float:
        return self.end_time - self.start_time

    @property
    def throughput(self) -> float:
        """图像/秒"""
        return self.batch_size / self.execution_time if self.execution_time > 0 else 0


class PerformanceMonitor:
    """start/stop 之间的耗时、常驻内存增量（MB）与 CPU 占用"""

    def __init__(self):
        self.process = psutil.Process(os.getpid())
        self.start_time = 0.0
        self.start_memory = 0.0

    def _rss_mb(self) -> float:
        return self.process.memory_info().rss / _MB

    def start(self) -> None:
        self.start_time = time.perf_counter()
        self.start_memory = self._rss_mb()
        # 第一次调用只建立基准
        self.process.cpu_percent()

    def stop(self, source: str, batch_size: int = 1) -> PerformanceMetricsEvent:
        return PerformanceMetricsEvent(
            source=source,
            start_time=self.start_time,
            end_time=time.perf_counter(),
            memory_usage=self._rss_mb() - self.start_memory,
            cpu_percent=self.process.cpu_percent(),
            batch_size=batch_size,
        )


class PerformanceEventListener(EventListener):
    """按来源（fold_<i>、stream_<k> 等）累计性能事件"""

    def __init__(self):
        self.metrics: Dict[str, List[PerformanceMetricsEvent]] = {}

    def on_event(self, event: RunEvent) -> None:
        if not isinstance(event, PerformanceMetricsEvent):
            return
        self.metrics.setdefault(event.source, []).append(event)
        logger.debug("%s: 耗时 %.3f秒, %.1f 张图像/秒, 内存 %+.1fMB, CPU %.0f%%",
                     event.source, event.execution_time, event.throughput,
                     event.memory_usage, event.cpu_percent)

    def get_statistics(self, source: str) -> Dict[str, float]:
        """某个来源的累计耗时与平均吞吐量、内存增量、CPU；没有记录时返回空字典"""
        events = self.metrics.get(source)
        if not events:
            return {}
        n = len(events)
        return {
            "count": n,
            "total_time": sum(e.execution_time for e in events),
            "avg_throughput": sum(e.throughput for e in events) / n,
            "avg_memory_usage": sum(e.memory_usage for e in events) / n,
            "avg_cpu_percent": sum(e.cpu_percent for e in events) / n,
            "peak_memory_usage": max(e.memory_usage for e in events),
        }
