import json

import cv2
import numpy as np
import pytest
import torch

from src.config import TrainConfig
from src.data.synth import SynthSpec, synth_dataset
from src.events.listener import EventListener
from src.nets.bundle import build_bundle
from src.nets.generator import GeneratorConfig

# 微型网络：1 个残差块、4 个通道、8x8 输入
MICRO_KEYS = {
    "n_classes": 2,
    "epochs": 3,
    "batch_size": 8,
    "generator.num_res_blocks": 1,
    "generator.base_channels": 4,
    "classifier_width": 0.125,
    "classifier_stem": "compact",
    "perceptual_width": 0.125,
    "image_size": 8,
    "eval_batch_size": 16,
    "synth.images_per_class": 12,
    "synth.size": [8, 8],
}


def micro_config(**kwargs) -> TrainConfig:
    """微型网络的配置，kwargs 覆盖 TrainConfig 字段"""
    base = dict(
        n_classes=2,
        epochs=3,
        batch_size=8,
        generator=GeneratorConfig(num_res_blocks=1, base_channels=4),
        classifier_width=0.125,
        classifier_stem="compact",
        perceptual_width=0.125,
        image_size=8,
        eval_batch_size=16,
        synth=SynthSpec(n_classes=kwargs.get("n_classes", 2), images_per_class=12, size=(8, 8)),
    )
    base.update(kwargs)
    return TrainConfig(**base)


class RecordingListener(EventListener):
    """记录收到的全部事件"""

    def __init__(self):
        self.events = []

    def on_event(self, event):
        self.events.append(event)


@pytest.fixture
def micro_cfg():
    return micro_config()


@pytest.fixture
def micro_bundle(micro_cfg):
    return build_bundle(micro_cfg)


@pytest.fixture
def micro_batch():
    """B=3 的 8x8 批次与标签"""
    g = torch.Generator().manual_seed(7)
    X = torch.rand(3, 3, 8, 8, generator=g)
    return X, torch.tensor([0, 1, 0])


@pytest.fixture
def small_dataset():
    return synth_dataset(SynthSpec(n_classes=2, images_per_class=12, size=(8, 8)), seed=3)


@pytest.fixture
def recording_listener():
    return RecordingListener()


@pytest.fixture
def micro_config_file(tmp_path):
    """写出微型配置文件"""
    path = tmp_path / "micro.json"
    path.write_text(json.dumps(MICRO_KEYS), encoding="utf-8")
    return str(path)


@pytest.fixture
def sample_image_data():
    """创建一个测试用的示例图像"""
    return np.full((16, 16, 3), 128, dtype=np.uint8)


@pytest.fixture
def temp_image_path(tmp_path, sample_image_data):
    """创建一个临时图像文件"""
    image_path = tmp_path / "test_image.png"
    cv2.imwrite(str(image_path), sample_image_data)
    return str(image_path)
