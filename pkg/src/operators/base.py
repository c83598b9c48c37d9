from abc import ABC, abstractmethod
from typing import Any, List, Optional

from ..events.events import RunEvent, OperatorStartEvent, OperatorCompleteEvent
from ..events.listener import EventListener
from ..executors.base import Executor, SequentialExecutor


class PipelineOperator(ABC):
    """算子基类：一次 run 处理一份输入，前后各发出一个事件"""

    def __init__(self, name: str, executor: Optional[Executor] = None):
        self.name = name
        self.listeners: List[EventListener] = []
        self.executor = executor or SequentialExecutor()

    def add_listener(self, listener: EventListener) -> None:
        # 同一个监听器只注册一次
        if listener not in self.listeners:
            self.listeners.append(listener)

    def notify_listeners(self, event: RunEvent) -> None:
        for listener in self.listeners:
            listener.on_event(event)

    def run(self, data: Any) -> Any:
        """交给执行器处理，出错时同样发出完成事件"""
        self.notify_listeners(OperatorStartEvent(self.name))
        try:
            outputs = list(self.executor.execute(self._process_impl, data))
        finally:
            self.notify_listeners(OperatorCompleteEvent(self.name))
        return outputs[0]

    @abstractmethod
    def _process_impl(self, data: Any) -> Any:
        """具体的处理逻辑，由子类实现"""
