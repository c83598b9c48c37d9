from typing import Any, Callable, List
from .base import PipelineOperator


class FuseOperator(PipelineOperator):
    """汇合算子：接收所有分支结果（按分支添加顺序），交给融合函数"""

    def __init__(self, name: str, fuse_fn: Callable[[List[Any]], Any]):
        super().__init__(name)
        self.fuse_fn = fuse_fn

    def _process_impl(self, data: Any) -> Any:
        # 只有一个分支时流水线直接传入该分支结果
        branches = data if isinstance(data, list) else [data]
        return self.fuse_fn(branches)
