import time

import pytest

from src.events.events import RunEvent
from src.events.performance import (
    PerformanceMetricsEvent,
    PerformanceMonitor,
    PerformanceEventListener
)


def _metrics(source="fold_1", start=100.0, end=105.0, memory=50.0, cpu=25.0, batch_size=1):
    return PerformanceMetricsEvent(
        source=source,
        start_time=start,
        end_time=end,
        memory_usage=memory,
        cpu_percent=cpu,
        batch_size=batch_size,
    )


class TestPerformanceMetricsEvent:
    """测试性能指标事件类"""

    def test_metrics_event_creation(self):
        """测试性能指标事件创建"""
        event = _metrics(batch_size=10)

        assert event.source == "fold_1"
        assert event.start_time == 100.0
        assert event.end_time == 105.0
        assert event.memory_usage == 50.0
        assert event.cpu_percent == 25.0
        assert event.batch_size == 10
        assert isinstance(event, RunEvent)

    def test_execution_time_calculation(self):
        """测试执行时间计算"""
        assert _metrics().execution_time == 5.0

    def test_throughput_calculation(self):
        """测试吞吐量计算"""
        assert _metrics(batch_size=10).throughput == 2.0  # 10 张图像 / 5 秒
        assert _metrics(start=1.0, end=1.0).throughput == 0


class TestPerformanceMonitor:
    """测试性能监控器"""

    def test_monitor_lifecycle(self):
        """测试监控器的生命周期"""
        monitor = PerformanceMonitor()
        monitor.start()

        time.sleep(0.05)

        event = monitor.stop("fold_2", batch_size=720)

        assert isinstance(event, PerformanceMetricsEvent)
        assert event.source == "fold_2"
        assert event.batch_size == 720
        assert event.execution_time > 0
        assert event.cpu_percent >= 0


class TestPerformanceEventListener:
    """测试性能事件监听器"""

    def test_multiple_events_statistics(self):
        """测试多个事件的统计"""
        listener = PerformanceEventListener()
        listener.on_event(_metrics(batch_size=10))
        listener.on_event(_metrics(start=200.0, end=207.0, memory=60.0, cpu=35.0, batch_size=14))

        stats = listener.get_statistics("fold_1")
        assert stats["total_time"] == 12.0  # 5.0 + 7.0
        assert stats["avg_throughput"] == pytest.approx(2.0)
        assert stats["avg_memory_usage"] == 55.0  # (50.0 + 60.0) / 2
        assert stats["avg_cpu_percent"] == 30.0  # (25.0 + 35.0) / 2

    def test_non_performance_event_handling(self):
        """测试处理非性能事件"""
        listener = PerformanceEventListener()
        listener.on_event(RunEvent("fold_1"))
        assert listener.get_statistics("fold_1") == {}

    def test_sources_kept_apart(self):
        listener = PerformanceEventListener()
        listener.on_event(_metrics("fold_1"))
        listener.on_event(_metrics("stream_0", end=101.0))
        assert listener.get_statistics("fold_1")["total_time"] == 5.0
        assert listener.get_statistics("stream_0")["total_time"] == 1.0
        assert listener.get_statistics("unknown") == {}
