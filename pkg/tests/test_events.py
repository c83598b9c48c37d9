import logging

import pandas as pd
import pytest

from src.events.events import (
    RunEvent,
    OperatorStartEvent,
    OperatorCompleteEvent,
    ProgressEvent,
    EpochCompleteEvent,
    FoldCompleteEvent,
    GeneratorStepEvent,
)
from src.events.listener import (
    LOSS_COLUMNS, LOSSES_FILE, METRICS_COLUMNS, EventListener, LoggingEventListener,
    MetricsCsvListener, loss_csv_listener,
)
from src.operators.map import MapLikeOperator


def _epoch(fold, epoch, val_loss=0.5):
    metrics = {"epoch": epoch, "train_loss_clf": 1.0, "mean_gen_total": 2.0,
               "val_loss": val_loss, "val_acc": 0.75, "lr_clf": 1e-3}
    return EpochCompleteEvent(f"fold_{fold}", fold=fold, metrics=metrics)


class TestRunEvents:
    """测试运行事件类"""

    def test_run_event_base(self):
        """测试基础事件类"""
        event = RunEvent("test_operator")
        assert event.source == "test_operator"

    def test_operator_events(self):
        """测试算子开始与完成事件"""
        for cls in (OperatorStartEvent, OperatorCompleteEvent):
            event = cls("stream_0")
            assert event.source == "stream_0"
            assert isinstance(event, RunEvent)

    def test_progress_event(self):
        """测试进度事件"""
        event = ProgressEvent("fold_1", 0.5, "轮 5")
        assert event.source == "fold_1"
        assert event.progress == 0.5
        assert event.message == "轮 5"
        assert isinstance(event, RunEvent)

    def test_progress_event_validation(self):
        """测试进度事件的数值验证"""
        with pytest.raises(ValueError):
            # 进度不能大于1
            ProgressEvent("test", 1.5, "错误的进度")

        with pytest.raises(ValueError):
            # 进度不能小于0
            ProgressEvent("test", -0.1, "错误的进度")

    def test_training_events(self):
        epoch = _epoch(2, 3)
        assert epoch.fold == 2 and epoch.metrics["epoch"] == 3
        done = FoldCompleteEvent("fold_2", fold=2, best_epoch=3, test_accuracy=0.9)
        assert not done.failed


class TestEventListener:
    """测试事件监听器"""

    def test_event_listener_interface(self):
        """测试事件监听器接口"""
        class CustomListener(EventListener):
            def on_event(self, event):
                pass

        listener = CustomListener()
        assert isinstance(listener, EventListener)
        with pytest.raises(TypeError):
            EventListener()

    def test_equality_by_identity(self):
        """同类型的不同实例互不相等，可以同时注册到一个算子上"""
        a, b = MetricsCsvListener("a.csv"), MetricsCsvListener("b.csv")
        assert a == a and a != b
        operator = MapLikeOperator("m", lambda x: x)
        for listener in (a, b, a):
            operator.add_listener(listener)
        assert operator.listeners == [a, b]

    def test_logging_listener(self, caplog):
        """测试日志事件监听器"""
        listener = LoggingEventListener()
        with caplog.at_level(logging.DEBUG, logger="src.events.listener"):
            listener.on_event(_epoch(1, 4, val_loss=0.125))
            listener.on_event(OperatorStartEvent("stream_1"))
        assert "val_loss=0.1250" in caplog.text
        assert "stream_1" in caplog.text

    def test_metrics_csv(self, tmp_path):
        """逐轮追加写入，表头只写一次"""
        path = tmp_path / "out" / "metrics.csv"
        listener = MetricsCsvListener(path)
        listener.on_event(OperatorStartEvent("ignored"))
        for fold, epoch in ((1, 1), (1, 2), (2, 1)):
            listener.on_event(_epoch(fold, epoch))
        frame = pd.read_csv(path)
        assert list(frame.columns) == METRICS_COLUMNS
        assert frame[["fold", "epoch"]].values.tolist() == [[1, 1], [1, 2], [2, 1]]

    def test_metrics_csv_restarts(self, tmp_path):
        """新的监听器覆盖旧文件"""
        path = tmp_path / "metrics.csv"
        MetricsCsvListener(path).on_event(_epoch(1, 1))
        MetricsCsvListener(path).on_event(_epoch(1, 1))
        assert len(pd.read_csv(path)) == 1

    def test_loss_csv(self, tmp_path):
        """生成器逐步损失：每个生成器每一步一行，其他事件忽略"""
        path = tmp_path / LOSSES_FILE
        listener = loss_csv_listener(path)
        listener.on_event(_epoch(1, 1))
        for step, k in ((0, 0), (0, 1), (1, 0)):
            listener.on_event(GeneratorStepEvent("fold_1", fold=1, metrics={
                "step": step, "k": k, "l_mse": 0.5, "l_perceptual": 2.0, "l_ce_routed": 0.25,
                "lambda": 0.01, "total": 0.5145,
            }))
        frame = pd.read_csv(path)
        assert list(frame.columns) == LOSS_COLUMNS
        assert frame[["fold", "step", "k"]].values.tolist() == [[1, 0, 0], [1, 0, 1], [1, 1, 0]]
        assert frame["total"].tolist() == [0.5145] * 3
