"""
流水线：用流式 API 搭建算子 DAG 并按拓扑顺序执行一次

推理时的数据流是 输入 -> 每个生成器一个分支 -> 汇合融合，见 src.fusion。
"""

from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional

from .events.events import ProgressEvent
from .events.listener import EventListener
from .events.performance import PerformanceMonitor
from .operators.base import PipelineOperator
from .operators.source import SourceOperator


def _n_items(data: Any) -> int:
    """性能事件里的样本数：张量/数组取第一维，列表取长度，其余记为 1"""
    shape = getattr(data, "shape", None)
    if shape is not None and len(shape) > 0:
        return int(shape[0])
    if isinstance(data, (list, tuple)):
        return len(data)
    return 1


class Pipeline:
    """算子 DAG

    branch 添加的算子都接在当前算子之后；join 把最近一次 branch 的全部分支
    （按添加顺序）接到汇合算子上。
    """

    def __init__(self, name: str, listeners: Iterable[EventListener] = ()):
        self.name = name
        self.operators: Dict[str, PipelineOperator] = {}
        self.edges: Dict[str, List[str]] = defaultdict(list)
        self.listeners: List[EventListener] = []
        self._tail: List[str] = []
        for listener in listeners:
            self.add_listener(listener)

    def source(self, name: str, iterator: Iterable[Any]) -> 'Pipeline':
        """添加数据源算子，每次执行取一个元素"""
        return self.then(SourceOperator(name, iterator))

    def then(self, operator: PipelineOperator) -> 'Pipeline':
        """接在当前末端之后；末端有多个分支时等同于 join"""
        self.add_operator(operator)
        for prev in self._tail:
            self.connect(prev, operator.name)
        self._tail = [operator.name]
        return self

    def branch(self, *operators: PipelineOperator) -> 'Pipeline':
        """并行分支，所有分支接收当前算子的输出"""
        if len(self._tail) != 1:
            raise ValueError("必须先添加一个算子（且不能处于未汇合的分支中）才能创建分支")
        parent = self._tail[0]
        for op in operators:
            self.add_operator(op)
            self.connect(parent, op.name)
        self._tail = [op.name for op in operators]
        return self

    def join(self, operator: PipelineOperator) -> 'Pipeline':
        """汇合最近一次 branch 的分支，汇合算子按分支顺序收到各分支结果"""
        if not self._tail:
            raise ValueError("没有可以汇合的分支")
        return self.then(operator)

    def add_listener(self, listener: EventListener) -> 'Pipeline':
        """全局监听器，对已有和之后添加的算子都生效"""
        if listener not in self.listeners:
            self.listeners.append(listener)
            for operator in self.operators.values():
                operator.add_listener(listener)
        return self

    def add_operator(self, operator: PipelineOperator) -> 'Pipeline':
        if operator.name in self.operators:
            raise ValueError(f"算子 {operator.name} 已存在")
        self.operators[operator.name] = operator
        for listener in self.listeners:
            operator.add_listener(listener)
        return self

    def connect(self, from_op: str, to_op: str) -> 'Pipeline':
        if from_op not in self.operators:
            raise ValueError(f"源算子 {from_op} 不存在")
        if to_op not in self.operators:
            raise ValueError(f"目标算子 {to_op} 不存在")
        self.edges[from_op].append(to_op)
        return self

    def predecessors(self, name: str) -> List[str]:
        """name 的前置算子，按算子添加顺序"""
        return [op for op in self.operators if name in self.edges.get(op, [])]

    def topological_order(self) -> List[str]:
        """添加顺序优先的拓扑排序，有环时报错"""
        indegree = {name: len(self.predecessors(name)) for name in self.operators}
        ready = [name for name in self.operators if indegree[name] == 0]
        order: List[str] = []
        while ready:
            name = ready.pop(0)
            order.append(name)
            for nxt in self.edges.get(name, []):
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
            ready.sort(key=list(self.operators).index)
        if len(order) != len(self.operators):
            raise ValueError(f"流水线 {self.name} 中存在环")
        return order

    def execute(self, initial_data: Optional[Any] = None) -> Dict[str, Any]:
        """执行一次，返回每个算子的输出（按拓扑顺序）"""
        if not self.operators:
            raise ValueError("流水线为空")

        order = self.topological_order()
        results: Dict[str, Any] = {}
        for done, name in enumerate(order, start=1):
            op = self.operators[name]
            inputs = [results[p] for p in self.predecessors(name)]
            if not inputs:
                data = initial_data
            elif len(inputs) == 1:
                data = inputs[0]
            else:
                data = inputs

            monitor = PerformanceMonitor()
            monitor.start()
            results[name] = op.run(data)
            op.notify_listeners(monitor.stop(name, batch_size=_n_items(results[name])))

            progress = done / len(order)
            op.notify_listeners(ProgressEvent(name, progress, f"执行进度: {progress:.0%}"))
        return results
