"""
类别变换生成器

每个生成器 G_k 把输入图像 X 变换为 X'_k，输出尺寸与输入一致。
结构: 3->C 卷积 + PReLU，若干相同的残差块，最后一层卷积把通道数还原为 3。
"""

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ConfigError

# PReLU 斜率初值
PRELU_INIT = 0.25
# 生成器输入的最小边长
MIN_GENERATOR_SIZE = 8


@dataclass
class GeneratorConfig:
    """生成器超参数，卷积核固定为 3x3"""
    num_res_blocks: int = 5
    base_channels: int = 64
    use_global_skip: bool = False
    # 初始化种子偏移，build_bundle 会加上运行种子
    seed: int = 0

    def __post_init__(self):
        if int(self.num_res_blocks) < 1:
            raise ConfigError(f"num_res_blocks 必须 >= 1，当前值: {self.num_res_blocks}")
        if int(self.base_channels) < 1:
            raise ConfigError(f"base_channels 必须 >= 1，当前值: {self.base_channels}")


class ResidualBlock(nn.Module):
    """conv-BN-PReLU-conv-BN，加上恒等跳连"""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels, momentum=0.1)
        self.prelu = nn.PReLU(init=PRELU_INIT)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels, momentum=0.1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = self.conv1(x)
        residual = self.bn1(residual)
        residual = self.prelu(residual)
        residual = self.conv2(residual)
        residual = self.bn2(residual)
        return x + residual


class GeneratorNet(nn.Module):
    """第 class_index 个类别的变换生成器"""

    def __init__(self, config: GeneratorConfig, class_index: int):
        super().__init__()
        self.config = config
        self.class_index = class_index
        channels = config.base_channels
        self.head = nn.Sequential(
            nn.Conv2d(3, channels, kernel_size=3, padding=1),
            nn.PReLU(init=PRELU_INIT),
        )
        self.res_blocks = nn.Sequential(
            *[ResidualBlock(channels) for _ in range(config.num_res_blocks)]
        )
        # 输出层没有激活函数，导出图像时才截断到 [0,1]
        self.tail = nn.Conv2d(channels, 3, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"生成器输入必须是 (B,3,H,W)，当前形状: {tuple(x.shape)}")
        if min(x.shape[2], x.shape[3]) < MIN_GENERATOR_SIZE:
            raise ValueError(
                f"生成器输入的 H, W 必须 >= {MIN_GENERATOR_SIZE}，当前形状: {tuple(x.shape)}"
            )
        out = self.tail(self.res_blocks(self.head(x)))
        if self.config.use_global_skip:
            out = out + x
        return out


def build_generator(cfg: GeneratorConfig, class_index: int, n_classes: int = None) -> GeneratorNet:
    """按配置构建生成器，参数由 cfg.seed 与 class_index 决定"""
    if class_index < 0 or (n_classes is not None and class_index >= n_classes):
        raise ConfigError(f"class_index 超出范围: {class_index}")
    # 不打乱全局随机数状态
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(cfg.seed) + class_index)
        return GeneratorNet(cfg, class_index)


def generator_forward(gen: GeneratorNet, X: torch.Tensor) -> torch.Tensor:
    """X'_k = G_k(X)，对生成器参数可导"""
    return gen(X)
