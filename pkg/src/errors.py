"""
框架异常定义
每类异常对应命令行的一个退出码
"""


class FucitError(Exception):
    """框架异常基类"""

    exit_code = 1


class ConfigError(FucitError, ValueError):
    """配置或用法错误"""

    exit_code = 1


class DataError(FucitError, ValueError):
    """数据集、图像文件或权重文件错误"""

    exit_code = 2


class DivergenceError(FucitError, RuntimeError):
    """训练出现非有限损失"""

    exit_code = 3

    def __init__(self, message: str, dump_path: str = None):
        super().__init__(message)
        self.dump_path = dump_path
