"""
实验配置

配置文件是扁平的 JSON 对象，嵌套字段用点号表示，例如:

    {"lambda": 0.05, "epochs": 100, "generator.num_res_blocks": 5, "augment.enabled": true}

命令行 --override K=V 使用同样的键。未知键在任何工作开始前就会被拒绝。
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass, replace, asdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .data.augment import AugmentPolicy
from .data.synth import SynthSpec
from .errors import ConfigError
from .nets.generator import GeneratorConfig

# 13 个 lambda 取值，从强到弱
DEFAULT_LAMBDA_GRID = [1.0, 0.5, 0.1, 0.075, 0.05, 0.025, 0.01, 0.0075, 0.005, 0.0025, 0.001, 0.00075, 0.0005]

# 文件中的键名 -> 字段名
_ALIASES = {"lambda": "lambda_"}
_REVERSE_ALIASES = {v: k for k, v in _ALIASES.items()}


def _as_float(obj: Any) -> None:
    for f in fields(obj):
        value = getattr(obj, f.name)
        if f.type is float and isinstance(value, int) and not isinstance(value, bool):
            setattr(obj, f.name, float(value))


@dataclass
class TrainConfig:
    """训练、数据与网络的全部超参数"""
    n_classes: int = 2
    lambda_: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    lr_gen: float = 1e-4
    lr_clf: float = 1e-3
    clf_lr_decay_factor: float = 0.1
    clf_lr_decay_every: int = 5
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 10
    seed: int = 0
    fine_tune_only_head: bool = False
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    # 网络
    use_generators: bool = True
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    perceptual_weight: float = 0.006
    classifier_width: float = 1.0
    classifier_stem: str = "imagenet"
    classifier_weights: Optional[str] = None
    perceptual_tap: str = "relu2_2"
    perceptual_width: float = 1.0
    perceptual_source: str = "random"
    perceptual_weights: Optional[str] = None

    # 验证损失: streams = 所有变换流的交叉熵之和, fused = 融合后的交叉熵
    val_loss_mode: str = "streams"

    # 数据
    data_root: Optional[str] = None
    image_size: int = 64
    n_folds: int = 3
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    synth: SynthSpec = field(default_factory=SynthSpec)
    eval_batch_size: int = 64

    lambdas: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))

    def __post_init__(self):
        # 整数写进浮点字段时统一为 float，保证摘要在保存/加载后不变
        _as_float(self)
        for name in ("augment", "generator", "synth"):
            nested = copy.copy(getattr(self, name))
            _as_float(nested)
            setattr(self, name, nested)
        self.lambdas = [float(v) for v in self.lambdas]
        if self.n_classes < 2:
            raise ConfigError(f"n_classes 必须 >= 2，当前值: {self.n_classes}")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda 必须 >= 0，当前值: {self.lambda_}")
        for name in ("lr_gen", "lr_clf", "clf_lr_decay_factor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} 必须 > 0，当前值: {getattr(self, name)}")
        for name in ("epochs", "batch_size", "patience", "clf_lr_decay_every", "n_folds",
                     "image_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} 必须 >= 1，当前值: {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay 必须 >= 0，当前值: {self.weight_decay}")
        if self.perceptual_weight < 0:
            raise ConfigError(f"perceptual_weight 必须 >= 0，当前值: {self.perceptual_weight}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction 必须在 (0,1) 内，当前值: {self.test_fraction}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction 必须在 [0,1) 内，当前值: {self.val_fraction}")
        if self.val_loss_mode not in ("streams", "fused"):
            raise ConfigError(f"val_loss_mode 必须是 streams 或 fused，当前值: {self.val_loss_mode}")
        if any(float(v) < 0 for v in self.lambdas):
            raise ConfigError(f"lambdas 不能包含负数: {self.lambdas}")

    def setup_label(self) -> str:
        """结果表格中的配置名称，如 "FuCiTNet, Data aug, FT, λ=0.05" """
        parts = [name for flag, name in ((self.augment.enabled, "Data aug"),
                                         (self.fine_tune_only_head, "FT")) if flag]
        if not self.use_generators:
            return ", ".join(parts) if parts else "None"
        return ", ".join(["FuCiTNet", *parts, f"λ={self.lambda_:g}"])


def _coerce(key: str, value: Any, current: Any) -> Any:
    """按默认值的类型转换配置值"""
    if current is None or value is None:
        return value
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            if isinstance(value, (int, float)):
                return tuple(int(value) for _ in current)
            return tuple(type(c)(v) for c, v in zip(current, value))
        if isinstance(current, list):
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [float(v) for v in value]
        if isinstance(current, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"配置项 {key} 的值无效: {value!r}")
    return value


def _set_field(obj: Any, parts: List[str], value: Any, key: str) -> Any:
    name = _ALIASES.get(parts[0], parts[0])
    known = {f.name for f in fields(obj)}
    if name not in known:
        raise ConfigError(f"未知的配置项: {key}")
    current = getattr(obj, name)
    if len(parts) == 1:
        if is_dataclass(current):
            raise ConfigError(f"配置项 {key} 是分组，请使用 {key}.<字段> 形式")
        return replace(obj, **{name: _coerce(key, value, current)})
    if not is_dataclass(current):
        raise ConfigError(f"未知的配置项: {key}")
    return replace(obj, **{name: _set_field(current, parts[1:], value, key)})


def apply_overrides(cfg: TrainConfig, items: Dict[str, Any]) -> TrainConfig:
    """按点号键逐项修改配置"""
    for key, value in items.items():
        cfg = _set_field(cfg, key.split("."), value, key)
    return cfg


def _flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in data.items():
        key = _REVERSE_ALIASES.get(key, key) if not prefix else key
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = list(value) if isinstance(value, tuple) else value
    return flat


def to_flat_dict(cfg: TrainConfig) -> Dict[str, Any]:
    """扁平字典，键与配置文件一致"""
    return _flatten(asdict(cfg))


def from_flat_dict(flat: Dict[str, Any]) -> TrainConfig:
    return apply_overrides(TrainConfig(), _flatten(flat))


def parse_override(item: str) -> Tuple[str, Any]:
    """解析 K=V，值优先按 JSON 解码"""
    if "=" not in item:
        raise ConfigError(f"--override 必须是 K=V 形式，当前值: {item}")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"--override 缺少键名: {item}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Iterable[str] = ()) -> TrainConfig:
    """读取配置文件并应用覆盖项"""
    data: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"找不到配置文件: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件 {p} 不是合法的 JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件 {p} 必须是 JSON 对象")
    cfg = apply_overrides(TrainConfig(), _flatten(data))
    return apply_overrides(cfg, dict(parse_override(o) for o in overrides))


def config_digest(cfg: TrainConfig) -> str:
    """配置的 SHA-256 摘要，用于检测配置漂移"""
    canonical = json.dumps(to_flat_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
