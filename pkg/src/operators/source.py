from typing import Any, Iterable

from .base import PipelineOperator


class SourceOperator(PipelineOperator):
    """数据源算子，每次执行取下一个元素，取完后返回 None"""

    def __init__(self, name: str, items: Iterable[Any]):
        super().__init__(name)
        self.iterator = iter(items)

    def _process_impl(self, _: Any) -> Any:
        return next(self.iterator, None)
