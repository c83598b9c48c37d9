"""
网络模块：类别变换生成器、ResNet-18 分类器、冻结的感知特征网络

ModelBundle 与检查点读写在 src.nets.bundle 中（它依赖配置模块，这里不导入）。
"""

from .generator import GeneratorConfig, GeneratorNet, ResidualBlock, build_generator, generator_forward
from .classifier import ClassifierNet, build_classifier, classifier_forward
from .perceptual import PerceptualNet, build_perceptual, perceptual_features, tap_feature_shape

__all__ = [
    'GeneratorConfig', 'GeneratorNet', 'ResidualBlock', 'build_generator', 'generator_forward',
    'ClassifierNet', 'build_classifier', 'classifier_forward',
    'PerceptualNet', 'build_perceptual', 'perceptual_features', 'tap_feature_shape',
]
