"""
FuCiTNet 训练与推理框架
N 个类别变换生成器与分类器联合训练，推理时按 argmax mod N 融合
"""

__version__ = "0.1.0"
