from abc import ABC, abstractmethod
from typing import Any, Callable, Iterable, Iterator


class Executor(ABC):
    """执行器接口：execute 处理一份数据，map 处理一组数据"""

    @abstractmethod
    def execute(self, func: Callable, data: Any) -> Iterator[Any]:
        """产出 func(data)"""

    def map(self, func: Callable, items: Iterable[Any]) -> Iterator[Any]:
        # 结果顺序由具体执行器决定
        for item in items:
            yield from self.execute(func, item)


class SequentialExecutor(Executor):
    """在当前进程内按顺序执行，结果顺序与输入一致"""

    def execute(self, func: Callable, data: Any) -> Iterator[Any]:
        yield func(data)
