from typing import Any, Callable, Optional

from .base import PipelineOperator
from ..executors.base import Executor


class MapLikeOperator(PipelineOperator):
    """映射算子

    输入是列表时逐个元素调用 transform_fn，其余输入（张量、数组）整体调用一次。
    推理时每个变换流就是一个映射算子: X -> classifier(G_k(X))。
    """

    def __init__(self, name: str, transform_fn: Callable,
                 executor: Optional[Executor] = None):
        super().__init__(name, executor)
        self.transform_fn = transform_fn

    def _process_impl(self, data: Any) -> Any:
        if isinstance(data, list):
            return [self.transform_fn(item) for item in data]
        return self.transform_fn(data)
