"""
冻结的感知特征网络（VGG-16 卷积部分）

features 的下标与 torchvision vgg16().features 相同，预训练权重文件里的
features.N.weight 可以直接加载。只保留到 tap_layer 为止的层。

tap_layer 对照表（输入 (1,3,64,64)，width=1）:

    relu1_2 -> (64, 64, 64)     relu2_2 -> (128, 32, 32)   relu3_3 -> (256, 16, 16)
    relu4_3 -> (512, 8, 8)      relu5_3 -> (512, 4, 4)

通道数按 width 缩放，空间尺寸 = 输入尺寸 / 2^(stage-1)。
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import torch
from torch import nn

from ..errors import ConfigError, DataError

logger = logging.getLogger(__name__)

# (通道数, 卷积层数)，与 VGG-16 一致
VGG16_STAGES = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_TAP = "relu2_2"
CACHE_ENV = "FUCIT_CACHE"


def vgg16_layer_names() -> List[str]:
    """features 中每个下标对应的层名"""
    names = []
    for stage, (_, n_convs) in enumerate(VGG16_STAGES, start=1):
        for i in range(1, n_convs + 1):
            names += [f"conv{stage}_{i}", f"relu{stage}_{i}"]
        names.append(f"pool{stage}")
    return names


def tap_feature_shape(tap_layer: str, input_hw: Tuple[int, int], width: float = 1.0) -> Tuple[int, int, int]:
    """给定输入尺寸，返回 tap_layer 特征图的 (C_j, H_j, W_j)"""
    names = vgg16_layer_names()
    if tap_layer not in names:
        raise ConfigError(f"未知的 perceptual_tap: {tap_layer}")
    # conv/relu/pool 前缀都是 4 个字符
    stage = int(tap_layer[4])
    channels = max(1, int(round(VGG16_STAGES[stage - 1][0] * width)))
    pools = stage if tap_layer.startswith("pool") else stage - 1
    h, w = input_hw
    return channels, h // (2 ** pools), w // (2 ** pools)


def resolve_weights_path(path: Union[str, Path]) -> Path:
    """相对路径先按当前目录查找，再到 FUCIT_CACHE 目录下查找"""
    p = Path(path).expanduser()
    if p.is_file() or p.is_absolute():
        return p
    cache = os.environ.get(CACHE_ENV)
    if cache:
        cached = Path(cache).expanduser() / p
        if cached.is_file():
            return cached
    return p


class PerceptualNet(nn.Module):
    """phi_j 特征提取器，参数永远不参与训练"""

    def __init__(self, tap_layer: str = DEFAULT_TAP, width: float = 1.0,
                 source: str = "random", normalize_input: Optional[bool] = None):
        super().__init__()
        names = vgg16_layer_names()
        if tap_layer not in names:
            raise ConfigError(f"未知的 perceptual_tap: {tap_layer}，可选: {names}")
        if source not in ("random", "pretrained"):
            raise ConfigError(f"perceptual_source 必须是 random 或 pretrained，当前值: {source}")
        if width <= 0:
            raise ConfigError(f"perceptual_width 必须 > 0，当前值: {width}")
        self.tap_layer = tap_layer
        self.source = source
        self.width = width
        self.normalize_input = source == "pretrained" if normalize_input is None else normalize_input

        layers: List[nn.Module] = []
        in_channels = 3
        for channels, n_convs in VGG16_STAGES:
            channels = max(1, int(round(channels * width)))
            for _ in range(n_convs):
                layers.append(nn.Conv2d(in_channels, channels, kernel_size=3, padding=1))
                layers.append(nn.ReLU(inplace=False))
                in_channels = channels
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        self.features = nn.Sequential(*layers[: names.index(tap_layer) + 1])
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.freeze()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        super().train(False)

    def train(self, mode: bool = True) -> "PerceptualNet":
        # 始终保持推理模式
        return super().train(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.normalize_input:
            x = (x - self.mean) / self.std
        return self.features(x)

    def load_pretrained(self, path: Union[str, Path]) -> None:
        """从 torchvision 布局的 VGG-16 权重文件加载 features.* 参数"""
        resolved = resolve_weights_path(path)
        if not resolved.is_file():
            raise DataError(f"找不到感知网络预训练权重文件: {resolved}")
        state = torch.load(resolved, map_location="cpu", weights_only=False)
        if isinstance(state, dict) and "tensors" in state:
            state = state["tensors"]
        own = self.state_dict()
        loaded: Dict[str, torch.Tensor] = {}
        for name, tensor in state.items():
            key = name[len("module."):] if name.startswith("module.") else name
            key = key[len("perceptual."):] if key.startswith("perceptual.") else key
            if key in own and key not in ("mean", "std"):
                if own[key].shape != tensor.shape:
                    raise DataError(f"权重形状不匹配: {key} {tuple(tensor.shape)} != {tuple(own[key].shape)}")
                loaded[key] = tensor
        missing = [k for k in own if k not in loaded and k not in ("mean", "std")]
        if missing:
            raise DataError(f"权重文件 {resolved} 缺少参数: {missing[:5]}")
        self.load_state_dict({**own, **loaded})
        self.freeze()
        logger.info("已加载感知网络权重 %s (%d 个张量)", resolved, len(loaded))


def build_perceptual(tap_layer: str = DEFAULT_TAP, width: float = 1.0, source: str = "random",
                     weights_path: Optional[str] = None, seed: int = 0) -> PerceptualNet:
    """构建感知网络；source=pretrained 时必须提供权重文件"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        pnet = PerceptualNet(tap_layer, width, source)
    if source == "pretrained":
        if not weights_path:
            raise DataError("perceptual_source=pretrained 需要 perceptual_weights 路径")
        pnet.load_pretrained(weights_path)
    return pnet


def perceptual_features(pnet: PerceptualNet, X: torch.Tensor) -> torch.Tensor:
    """返回 (B, C_j, H_j, W_j) 特征，梯度流向 X 而不流向 pnet"""
    return pnet(X)
