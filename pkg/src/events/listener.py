import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence, Type, Union

import pandas as pd

from .events import RunEvent, EpochCompleteEvent, GeneratorStepEvent

logger = logging.getLogger(__name__)

# 指标流的列顺序
METRICS_COLUMNS = [
    "fold", "epoch", "train_loss_clf", "mean_gen_total", "val_loss", "val_acc", "lr_clf",
]

# 实验目录中逐步损失文件的名称
LOSSES_FILE = "losses.csv"

# 生成器逐步损失的列顺序
LOSS_COLUMNS = [
    "fold", "step", "k", "l_mse", "l_perceptual", "l_ce_routed", "lambda", "total",
]


class EventListener(ABC):
    """事件监听器接口，按对象身份区分，同一类型可以注册多个实例"""

    @abstractmethod
    def on_event(self, event: RunEvent) -> None:
        """处理事件的抽象方法"""
        pass


class LoggingEventListener(EventListener):
    """把事件写入日志"""

    def on_event(self, event: RunEvent) -> None:
        if isinstance(event, EpochCompleteEvent):
            m = event.metrics
            logger.info(
                "折 %d 轮 %d: clf=%.4f gen=%.4f val_loss=%.4f val_acc=%.3f lr=%.1e",
                event.fold, m.get("epoch", -1), m.get("train_loss_clf", float("nan")),
                m.get("mean_gen_total", float("nan")), m.get("val_loss", float("nan")),
                m.get("val_acc", float("nan")), m.get("lr_clf", float("nan")),
            )
        else:
            logger.debug("事件: %s", event)


class MetricsCsvListener(EventListener):
    """把带 fold 与 metrics 字段的事件逐行追加写入 CSV 文件

    默认记录轮次指标；loss_csv_listener 记录生成器逐步损失。
    """

    def __init__(self, path: Union[str, Path],
                 event_type: Type[RunEvent] = EpochCompleteEvent,
                 columns: Sequence[str] = tuple(METRICS_COLUMNS)):
        self.path = Path(path)
        self.event_type = event_type
        self.columns = list(columns)
        self._started = False

    def on_event(self, event: RunEvent) -> None:
        if not isinstance(event, self.event_type):
            return
        if not self._started:
            self.path.parent.mkdir(parents=True, exist_ok=True)
        row = {"fold": event.fold, **event.metrics}
        frame = pd.DataFrame([[row.get(c) for c in self.columns]], columns=self.columns)
        frame.to_csv(
            self.path,
            mode="a" if self._started else "w",
            header=not self._started,
            index=False,
        )
        self._started = True


def loss_csv_listener(path: Union[str, Path]) -> MetricsCsvListener:
    """每个生成器每一步一行：fold,step,k,l_mse,l_perceptual,l_ce_routed,lambda,total"""
    return MetricsCsvListener(path, GeneratorStepEvent, LOSS_COLUMNS)
