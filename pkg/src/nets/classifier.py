"""
ResNet-18 分类器

参数命名与 torchvision 的 resnet18 一致（conv1, bn1, layer1.0.conv1, ..., fc），
所以 ImageNet 预训练权重可以直接按名字加载。width_multiplier 用于桌面规模
的小模型，stem="compact" 用 3x3/步长1 的首层并去掉最大池化，最小输入降到 8。
"""

from typing import Optional

import torch
from torch import nn

from ..errors import ConfigError

STAGE_CHANNELS = (64, 128, 256, 512)
# 各 stem 的总下采样倍数即最小输入边长
MIN_INPUT_SIZE = {"imagenet": 32, "compact": 8}


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(planes, planes, kernel_size=3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.downsample: Optional[nn.Module] = None
        if stride != 1 or in_planes != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_planes, planes, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ClassifierNet(nn.Module):
    """输出每张图像长度为 N 的 logit 向量"""

    def __init__(self, num_classes: int, width_multiplier: float = 1.0, stem: str = "imagenet"):
        super().__init__()
        if num_classes < 2:
            raise ConfigError(f"n_classes 必须 >= 2，当前值: {num_classes}")
        if width_multiplier <= 0:
            raise ConfigError(f"classifier_width 必须 > 0，当前值: {width_multiplier}")
        if stem not in MIN_INPUT_SIZE:
            raise ConfigError(f"classifier_stem 必须是 {sorted(MIN_INPUT_SIZE)} 之一，当前值: {stem}")
        self.num_classes = num_classes
        self.width_multiplier = width_multiplier
        self.stem = stem
        self.min_input_size = MIN_INPUT_SIZE[stem]

        widths = [max(1, int(round(c * width_multiplier))) for c in STAGE_CHANNELS]
        if stem == "imagenet":
            self.conv1 = nn.Conv2d(3, widths[0], kernel_size=7, stride=2, padding=3, bias=False)
            self.maxpool: nn.Module = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        else:
            self.conv1 = nn.Conv2d(3, widths[0], kernel_size=3, stride=1, padding=1, bias=False)
            self.maxpool = nn.Identity()
        self.bn1 = nn.BatchNorm2d(widths[0])
        self.relu = nn.ReLU(inplace=True)

        in_planes = widths[0]
        for i, planes in enumerate(widths):
            stride = 1 if i == 0 else 2
            layer = nn.Sequential(BasicBlock(in_planes, planes, stride), BasicBlock(planes, planes, 1))
            setattr(self, f"layer{i + 1}", layer)
            in_planes = planes
        self.avgpool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(in_planes, num_classes)

        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"分类器输入必须是 (B,3,H,W)，当前形状: {tuple(x.shape)}")
        if min(x.shape[2], x.shape[3]) < self.min_input_size:
            raise ValueError(
                f"分类器输入的 H, W 必须 >= {self.min_input_size} (stem={self.stem})，"
                f"当前形状: {tuple(x.shape)}"
            )
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        x = torch.flatten(self.avgpool(x), 1)
        return self.fc(x)

    def head_parameters(self):
        """只微调最后全连接层时参与训练的参数"""
        return list(self.fc.parameters())


def build_classifier(num_classes: int, width_multiplier: float = 1.0,
                     stem: str = "imagenet", seed: int = 0) -> ClassifierNet:
    """按种子构建分类器"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return ClassifierNet(num_classes, width_multiplier, stem)


def classifier_forward(clf: ClassifierNet, X: torch.Tensor) -> torch.Tensor:
    """返回 (B, N) logits，对分类器参数和 X 都可导"""
    return clf(X)
