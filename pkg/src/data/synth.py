"""
合成数据集：桌面规模下代替真实数据集的可分类别图像

类别 k 的图像由三部分组成: 随 k 线性递增的亮度基准、频率为 k+1 的正弦条纹
（整周期，行均值为 0）、以及带种子的小幅噪声。按通道均值做线性分类器即可分开。
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ConfigError
from .dataset import Dataset, Sample


@dataclass
class SynthSpec:
    n_classes: int = 2
    images_per_class: int = 100
    size: Tuple[int, int] = (64, 64)
    stripe_amplitude: float = 0.15
    noise_amplitude: float = 0.05

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"synth.n_classes 必须 >= 2，当前值: {self.n_classes}")
        if self.images_per_class < 1:
            raise ConfigError(f"synth.images_per_class 必须 >= 1，当前值: {self.images_per_class}")
        if min(self.size) < 1:
            raise ConfigError(f"synth.size 无效: {self.size}")
        if self.stripe_amplitude + self.noise_amplitude > 0.25:
            raise ConfigError("synth.stripe_amplitude + synth.noise_amplitude 不能超过 0.25")


def class_level(k: int, n_classes: int) -> float:
    """类别 k 的亮度基准，分布在 [0.25, 0.75]"""
    return 0.25 + 0.5 * k / (n_classes - 1)


def render_image(k: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """生成类别 k 的一张 (3,H,W) 图像"""
    h, w = spec.size
    x = np.arange(w, dtype=np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    image = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        stripes = spec.stripe_amplitude * np.sin(2 * np.pi * (k + 1) * x / w + phase + c * np.pi / 3)
        image[c] = class_level(k, spec.n_classes) + stripes[None, :]
    image += rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def synth_dataset(spec: SynthSpec, seed: int = 0) -> Dataset:
    """按种子生成类别均衡的合成数据集

    image_id 与 load_dataset 读取 write_dataset 输出时得到的 id 相同；类别名按位数补零，
    保证目录排序与类别编号一致。
    """
    rng = np.random.default_rng(seed)
    width = len(str(spec.n_classes - 1))
    class_names = [f"class{k:0{width}d}" for k in range(spec.n_classes)]
    samples, images = [], []
    for k, name in enumerate(class_names):
        for i in range(spec.images_per_class):
            images.append(render_image(k, spec, rng))
            samples.append(Sample(f"{name}/synth_{k}_{i:04d}.png", k))
    return Dataset(samples, np.stack(images), class_names, tuple(spec.size))
