from dataclasses import dataclass, field
from typing import Any, Dict


@dataclass
class RunEvent:
    """运行事件基类，source 为产生事件的算子或训练阶段名称"""
    source: str


@dataclass
class OperatorStartEvent(RunEvent):
    """算子开始事件"""
    pass


@dataclass
class OperatorCompleteEvent(RunEvent):
    """算子完成事件"""
    pass


@dataclass
class ProgressEvent(RunEvent):
    """进度事件"""
    progress: float
    message: str

    def __post_init__(self):
        """验证进度值"""
        if not 0 <= self.progress <= 1:
            raise ValueError(f"进度值必须在0到1之间，当前值: {self.progress}")


@dataclass
class EpochCompleteEvent(RunEvent):
    """一个训练轮次结束，metrics 为该轮的指标行"""
    fold: int
    metrics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class FoldCompleteEvent(RunEvent):
    """一折训练与测试结束"""
    fold: int
    best_epoch: int
    test_accuracy: float
    failed: bool = False


@dataclass
class GeneratorStepEvent(RunEvent):
    """生成器 k 的一次更新，metrics 为该步的损失分解行"""
    fold: int
    metrics: Dict[str, Any] = field(default_factory=dict)
