"""
可训练系统：N 个生成器 + 分类器 + 冻结的感知网络 + 优化器状态

检查点是单个 torch.save 文件:

    {"tensors": {名称: 张量}, "optimizers": {...}, "metadata": JSON 字符串}

metadata 包含 n_classes, lambda, epoch, seed, config_digest 以及完整配置，
加载时据此重建网络。张量名以 generators.<k>. / classifier. / perceptual. 开头。
"""

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import torch
from torch import nn

from ..config import TrainConfig, config_digest, from_flat_dict, to_flat_dict
from ..errors import ConfigError, DataError
from .classifier import ClassifierNet, build_classifier
from .generator import GeneratorNet, build_generator
from .perceptual import PerceptualNet, build_perceptual, resolve_weights_path

logger = logging.getLogger(__name__)

# 外部分类器权重的名称映射：去掉这些前缀后与 torchvision resnet18 的名称一致
CLASSIFIER_NAME_PREFIXES = ("module.", "model.", "classifier.", "backbone.")


class ModelBundle:
    """一次实验独占的全部网络与优化器"""

    def __init__(self, cfg: TrainConfig, generators: List[GeneratorNet],
                 classifier: ClassifierNet, perceptual: PerceptualNet):
        self.cfg = cfg
        self.generators = nn.ModuleList(generators)
        self.classifier = classifier
        self.perceptual = perceptual
        self.epoch = 0
        self.val_loss: Optional[float] = None
        self.gen_optimizers = [
            torch.optim.Adam(g.parameters(), lr=cfg.lr_gen,
                             betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
            for g in self.generators
        ]
        if cfg.fine_tune_only_head:
            for p in classifier.parameters():
                p.requires_grad_(False)
            for p in classifier.head_parameters():
                p.requires_grad_(True)
        self.clf_optimizer = torch.optim.Adam(
            [p for p in classifier.parameters() if p.requires_grad],
            lr=cfg.lr_clf, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )

    @property
    def n_classes(self) -> int:
        return self.classifier.num_classes

    @property
    def uses_generators(self) -> bool:
        return len(self.generators) > 0

    def train(self) -> "ModelBundle":
        self.generators.train()
        self.classifier.train()
        return self

    def eval(self) -> "ModelBundle":
        self.generators.eval()
        self.classifier.eval()
        return self

    def to(self, dtype: torch.dtype) -> "ModelBundle":
        """切换精度（梯度检验使用 float64）"""
        self.generators.to(dtype)
        self.classifier.to(dtype)
        self.perceptual.to(dtype)
        return self

    def named_tensors(self) -> Dict[str, torch.Tensor]:
        """全部参数与缓冲区，名称在保存/加载之间保持稳定"""
        tensors: Dict[str, torch.Tensor] = {}
        for prefix, module in (("generators", self.generators),
                               ("classifier", self.classifier),
                               ("perceptual", self.perceptual)):
            for name, t in module.state_dict().items():
                tensors[f"{prefix}.{name}"] = t.detach().clone()
        return tensors

    def load_named_tensors(self, tensors: Dict[str, torch.Tensor]) -> None:
        for prefix, module in (("generators", self.generators),
                               ("classifier", self.classifier),
                               ("perceptual", self.perceptual)):
            part = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
            module.load_state_dict(part)

    def optimizer_state(self) -> Dict[str, Any]:
        return {
            "generators": [o.state_dict() for o in self.gen_optimizers],
            "classifier": self.clf_optimizer.state_dict(),
        }

    def load_optimizer_state(self, state: Dict[str, Any]) -> None:
        for opt, s in zip(self.gen_optimizers, state["generators"]):
            opt.load_state_dict(s)
        self.clf_optimizer.load_state_dict(state["classifier"])


def build_bundle(cfg: TrainConfig, seed: Optional[int] = None) -> ModelBundle:
    """按配置构建新的模型组合，seed 默认取 cfg.seed

    生成器 k 的初始化种子为 seed*1000 + generator.seed + k。
    """
    seed = cfg.seed if seed is None else seed
    gen_cfg = replace(cfg.generator, seed=seed * 1000 + int(cfg.generator.seed))
    generators = [build_generator(gen_cfg, k, cfg.n_classes) for k in range(cfg.n_classes)] \
        if cfg.use_generators else []
    classifier = build_classifier(cfg.n_classes, cfg.classifier_width, cfg.classifier_stem, seed=seed)
    if cfg.classifier_weights:
        load_classifier_weights(classifier, cfg.classifier_weights)
    perceptual = build_perceptual(cfg.perceptual_tap, cfg.perceptual_width, cfg.perceptual_source,
                                  cfg.perceptual_weights, seed=seed)
    return ModelBundle(cfg, generators, classifier, perceptual)


def save_weights(bundle: ModelBundle, path: Union[str, Path], epoch: Optional[int] = None,
                 val_loss: Optional[float] = None) -> Path:
    """写入检查点文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = bundle.cfg
    metadata = {
        "n_classes": bundle.n_classes,
        "lambda": cfg.lambda_,
        "epoch": bundle.epoch if epoch is None else epoch,
        "seed": cfg.seed,
        "config_digest": config_digest(cfg),
        "val_loss": bundle.val_loss if val_loss is None else val_loss,
        "config": to_flat_dict(cfg),
    }
    torch.save({
        "tensors": bundle.named_tensors(),
        "optimizers": bundle.optimizer_state(),
        "metadata": json.dumps(metadata, sort_keys=True, ensure_ascii=False),
    }, path)
    return path


def read_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    """只读取检查点的元数据"""
    return json.loads(_read_container(path)["metadata"])


def _read_container(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"找不到检查点文件: {path}")
    container = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(container, dict) or "tensors" not in container or "metadata" not in container:
        raise DataError(f"不是有效的检查点文件: {path}")
    return container


def load_weights(path: Union[str, Path], expected: Optional[TrainConfig] = None,
                 n_classes: Optional[int] = None) -> ModelBundle:
    """读取检查点并重建模型组合

    expected 给定时比较配置摘要，不一致视为配置漂移；n_classes 给定时检查类别数。
    """
    container = _read_container(path)
    metadata = json.loads(container["metadata"])
    if n_classes is not None and metadata["n_classes"] != n_classes:
        raise ConfigError(
            f"检查点 {path} 的类别数为 {metadata['n_classes']}，当前实验为 {n_classes}"
        )
    if expected is not None and metadata["config_digest"] != config_digest(expected):
        raise ConfigError(f"检查点 {path} 的配置摘要与当前配置不一致（配置漂移）")

    cfg = from_flat_dict(metadata["config"])
    if config_digest(cfg) != metadata["config_digest"]:
        raise ConfigError(f"检查点 {path} 的元数据已损坏：配置摘要不匹配")
    # 权重来自检查点本身，不再读取外部预训练文件
    cfg_no_files = replace(cfg, classifier_weights=None, perceptual_weights=None,
                           perceptual_source="random")
    bundle = build_bundle(cfg_no_files)
    if cfg.perceptual_source == "pretrained":
        bundle.perceptual = PerceptualNet(cfg.perceptual_tap, cfg.perceptual_width, "pretrained")
    bundle.cfg = cfg
    bundle.load_named_tensors(container["tensors"])
    bundle.perceptual.freeze()
    if "optimizers" in container:
        bundle.load_optimizer_state(container["optimizers"])
    bundle.epoch = metadata.get("epoch", 0)
    bundle.val_loss = metadata.get("val_loss")
    return bundle


def load_classifier_weights(clf: ClassifierNet, path: Union[str, Path]) -> List[str]:
    """加载外部分类器权重（如 ImageNet 预训练的 resnet18）

    名称去掉 CLASSIFIER_NAME_PREFIXES 中的前缀后按名字匹配；最后全连接层
    形状不同时（类别数不同）保留随机初始化。其余参数形状不匹配或缺失时拒绝。
    返回被跳过的参数名。
    """
    resolved = resolve_weights_path(path)
    if not resolved.is_file():
        raise DataError(f"找不到分类器权重文件: {resolved}")
    state = torch.load(resolved, map_location="cpu", weights_only=False)
    if isinstance(state, dict) and "tensors" in state:
        state = state["tensors"]
    renamed: Dict[str, torch.Tensor] = {}
    for name, tensor in state.items():
        for prefix in CLASSIFIER_NAME_PREFIXES:
            if name.startswith(prefix):
                name = name[len(prefix):]
                break
        renamed[name] = tensor

    own = clf.state_dict()
    skipped = []
    for name, target in own.items():
        if name not in renamed:
            if name.endswith("num_batches_tracked"):
                continue
            raise DataError(f"权重文件 {resolved} 缺少参数: {name}")
        if renamed[name].shape != target.shape:
            if name.startswith("fc."):
                skipped.append(name)
                continue
            raise DataError(
                f"参数 {name} 形状不匹配: {tuple(renamed[name].shape)} != {tuple(target.shape)}"
            )
    clf.load_state_dict({k: renamed.get(k, v) if k not in skipped else v for k, v in own.items()})
    if skipped:
        logger.info("分类器权重 %s: 最后全连接层形状不同，保留随机初始化", resolved)
    return skipped
