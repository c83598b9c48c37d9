"""
训练集数据增强：随机水平翻转、随机旋转、随机仿射（平移 + 错切）

只作用于训练集；验证集与测试集的图像在各轮之间保持不变。
"""

import math
from dataclasses import dataclass

import cv2
import numpy as np

from ..errors import ConfigError


@dataclass
class AugmentPolicy:
    """增强参数，幅度的单位: 角度为度，平移为图像边长的比例"""
    hflip_prob: float = 0.5
    rotation_degrees: float = 15.0
    translate: float = 0.1
    shear_degrees: float = 10.0
    enabled: bool = False

    def __post_init__(self):
        if not 0 <= self.hflip_prob <= 1:
            raise ConfigError(f"augment.hflip_prob 必须在 [0,1] 内，当前值: {self.hflip_prob}")
        if self.rotation_degrees < 0 or self.shear_degrees < 0:
            raise ConfigError("augment.rotation_degrees 与 augment.shear_degrees 必须 >= 0")
        if not 0 <= self.translate <= 1:
            raise ConfigError(f"augment.translate 必须在 [0,1] 内，当前值: {self.translate}")


def _affine_matrix(angle: float, shear: float, tx: float, ty: float, h: int, w: int) -> np.ndarray:
    """绕图像中心旋转 + 错切，再平移，返回 2x3 矩阵"""
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a = math.radians(angle)
    s = math.radians(shear)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shr = np.array([[1.0, math.tan(s)], [0.0, 1.0]])
    lin = rot @ shr
    center = np.array([cx, cy])
    offset = center - lin @ center + np.array([tx, ty])
    return np.hstack([lin, offset[:, None]]).astype(np.float64)


def augment(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """对一张 (3,H,W) 图像做随机增强，输出同形状并截断到 [0,1]"""
    if not policy.enabled:
        return image

    _, h, w = image.shape
    # 无论是否生效都抽取全部随机数，保证随机流长度固定
    flip = rng.random() < policy.hflip_prob
    angle = rng.uniform(-policy.rotation_degrees, policy.rotation_degrees)
    shear = rng.uniform(-policy.shear_degrees, policy.shear_degrees)
    tx = rng.uniform(-policy.translate, policy.translate) * w
    ty = rng.uniform(-policy.translate, policy.translate) * h

    out = image[:, :, ::-1] if flip else image
    if angle != 0 or shear != 0 or tx != 0 or ty != 0:
        hwc = np.ascontiguousarray(out.transpose(1, 2, 0), dtype=np.float32)
        warped = cv2.warpAffine(
            hwc, _affine_matrix(angle, shear, tx, ty, h, w), (w, h),
            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101,
        )
        out = warped.reshape(h, w, -1).transpose(2, 0, 1)
    return np.clip(np.ascontiguousarray(out, dtype=np.float32), 0.0, 1.0)
