"""
数据集读取

目录结构为 root/<类别名>/<图像文件>，类别编号按类别目录名排序分配。
图像统一缩放到 image_size 并归一化到 [0,1]，以 (3,H,W) float32 数组常驻内存。
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset as TorchDataset

from ..errors import DataError
from .augment import AugmentPolicy, augment

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass(frozen=True)
class Sample:
    image_id: str
    label: int
    path: Optional[str] = None


@dataclass
class Dataset:
    """样本列表与对应的图像数组 images[i] <-> samples[i]"""
    samples: List[Sample]
    images: np.ndarray
    class_names: List[str]
    image_size: Tuple[int, int]

    def __post_init__(self):
        if len(self.samples) != len(self.images):
            raise DataError(f"样本数 {len(self.samples)} 与图像数 {len(self.images)} 不一致")
        n = len(self.class_names)
        bad = [s.image_id for s in self.samples if not 0 <= s.label < n]
        if bad:
            raise DataError(f"标签超出范围 [0,{n}): {bad[:5]}")
        self._index = {s.image_id: i for i, s in enumerate(self.samples)}

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.samples)

    def indices(self, image_ids: Sequence[str]) -> List[int]:
        """image_id -> 行号"""
        try:
            return [self._index[i] for i in image_ids]
        except KeyError as e:
            raise DataError(f"数据集中不存在图像: {e.args[0]}")


def decode_image(path: Union[str, Path], image_size: Tuple[int, int]) -> np.ndarray:
    """读取图像为 (3,H,W) float32 RGB，支持中文和英文路径"""
    path = str(path)
    try:
        # 使用numpy读取文件为二进制数据，再用imdecode解码
        img_array = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise DataError(f"无法读取图像: {path}, 读取时异常: {e}")
    if len(img_array) == 0:
        raise DataError(f"图像文件为空 - {path}")
    image = cv2.imdecode(img_array, cv2.IMREAD_COLOR)
    if image is None:
        if not os.access(path, os.R_OK):
            raise DataError(f"文件无法访问或没有读取权限 - {path}")
        raise DataError(f"图像文件可能已损坏或格式不支持 - {path}")
    h, w = image_size
    if image.shape[:2] != (h, w):
        image = cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR)
    image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    return (image.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def load_dataset(root_dir: Union[str, Path], image_size: Union[int, Tuple[int, int]] = 64) -> Dataset:
    """读取按类别分目录存放的数据集"""
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"数据集目录不存在: {root}")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"数据集目录下没有类别子目录: {root}")

    samples: List[Sample] = []
    images: List[np.ndarray] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise DataError(f"类别目录为空: {class_dir}")
        for f in files:
            images.append(decode_image(f, image_size))
            samples.append(Sample(f"{class_dir.name}/{f.name}", label, str(f)))

    logger.info("已读取数据集 %s: %d 张图像, %d 个类别", root, len(samples), len(class_dirs))
    return Dataset(samples, np.stack(images), [d.name for d in class_dirs], tuple(image_size))


def to_uint8_hwc(image: np.ndarray) -> np.ndarray:
    """(3,H,W) [0,1] -> (H,W,3) uint8，超出范围的值先截断"""
    clipped = np.clip(image, 0.0, 1.0).transpose(1, 2, 0)
    return np.round(clipped * 255.0).astype(np.uint8)


def write_dataset(ds: Dataset, root_dir: Union[str, Path]) -> Path:
    """把数据集写成 root/<类别名>/<id>.png 目录结构"""
    root = Path(root_dir)
    for sample, image in zip(ds.samples, ds.images):
        class_dir = root / ds.class_names[sample.label]
        class_dir.mkdir(parents=True, exist_ok=True)
        name = Path(sample.image_id).name
        if not Path(name).suffix:
            name += ".png"
        Image.fromarray(to_uint8_hwc(image)).save(class_dir / name)
    return root


class ImageSplit(TorchDataset):
    """数据集的一个子集，供 DataLoader 使用

    设置了增强策略时，每个样本的随机数由 (seed, epoch, 行号) 决定，
    与批次顺序和工作进程数无关。
    """

    def __init__(self, ds: Dataset, image_ids: Sequence[str],
                 policy: Optional[AugmentPolicy] = None, seed: int = 0):
        self.ds = ds
        self.image_ids = list(image_ids)
        self.rows = ds.indices(self.image_ids)
        self.policy = policy if policy is not None and policy.enabled else None
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, i: int):
        row = self.rows[i]
        image = self.ds.images[row]
        if self.policy is not None:
            rng = np.random.default_rng([self.seed, self.epoch, row])
            image = augment(image, self.policy, rng)
        return torch.from_numpy(np.ascontiguousarray(image)), self.ds.samples[row].label, i

    def tensors(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """不做增强的全部图像与标签"""
        images = torch.from_numpy(self.ds.images[self.rows])
        labels = torch.tensor([self.ds.samples[r].label for r in self.rows], dtype=torch.long)
        return images, labels
