"""Flat ``key=value`` configuration files for training runs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .models import ModelConfig
from .sidechain import SideChainConfig

TASKS = ("blurnoise", "noise", "haze", "switchable")

# flat key -> (section, attribute)
_MODEL_KEYS = {("model_seed" if f.name == "seed" else f.name): f.name
               for f in fields(ModelConfig) if f.name != "side_chain"}
_SIDE_KEYS = {"S": "S", "sc_depth": "depth", "epsilon": "epsilon", "tap_layer": "tap_layer",
              "inject_layer": "inject_layer", "num_relevance_instances": "num_relevance_instances",
              "sc_width": "width"}


@dataclass
class TrainConfig:
    task: str = "blurnoise"
    train_data: str = ""
    val_data: str = ""
    out_dir: str = "run"
    model: ModelConfig = field(default_factory=ModelConfig)
    patch_size: int = 32
    batch_size: int = 8
    steps: int = 2000
    lr: float = 1e-3
    lr_schedule: str = "constant"   # constant | cosine | step
    lr_min: float = 1e-5
    lr_step_every: int = 1000
    lr_gamma: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 0
    val_interval: int = 0
    strict_deterministic: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        d = 2 ** (self.model.depth - 1) if self.model.kind == "unet" else 1
        if self.patch_size % d:
            raise ValueError(f"patch_size {self.patch_size} must be divisible by {d}")
        if self.task == "switchable":
            sc = self.model.side_chain
            if sc is None or sc.num_relevance_instances != 2:
                raise ValueError("switchable task needs a side-chain with two relevance instances")
            if self.batch_size % 2:
                raise ValueError("switchable task needs an even batch size")
        if self.lr_schedule not in ("constant", "cosine", "step"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, step):
        if self.lr_schedule == "cosine":
            frac = min(step / max(self.steps, 1), 1.0)
            return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1 + math.cos(math.pi * frac))
        if self.lr_schedule == "step":
            return self.lr * self.lr_gamma ** (step // self.lr_step_every)
        return self.lr


def _parse_value(text, like):
    if like is None:
        # optional integer (sub-network width)
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(like, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_pairs(text):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def config_from_text(text):
    pairs = parse_pairs(text)
    train_defaults = TrainConfig.__dataclass_fields__
    model_kw, side_kw, train_kw = {}, {}, {}
    has_side = _parse_value(pairs.pop("side_chain", "false"), False)
    # haze is not zero-mean around the input, so dehazing models predict directly
    if pairs.get("task") == "haze":
        pairs.setdefault("residual", "false")
    mdefault, sdefault = ModelConfig(), SideChainConfig()
    for key, value in pairs.items():
        if key in _MODEL_KEYS:
            attr = _MODEL_KEYS[key]
            model_kw[attr] = _parse_value(value, getattr(mdefault, attr))
        elif key in _SIDE_KEYS:
            attr = _SIDE_KEYS[key]
            side_kw[attr] = _parse_value(value, getattr(sdefault, attr))
        elif key in train_defaults and key != "model":
            train_kw[key] = _parse_value(value, getattr(TrainConfig(), key))
        else:
            raise ValueError(f"unknown config key {key!r}")
    side = SideChainConfig(**side_kw) if has_side else None
    return TrainConfig(model=ModelConfig(side_chain=side, **model_kw), **train_kw)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return config_from_text(f.read())


def config_to_text(cfg):
    lines = []
    for f in fields(TrainConfig):
        if f.name == "model":
            continue
        lines.append(f"{f.name}={_fmt(getattr(cfg, f.name))}")
    for key, attr in _MODEL_KEYS.items():
        lines.append(f"{key}={_fmt(getattr(cfg.model, attr))}")
    sc = cfg.model.side_chain
    lines.append(f"side_chain={_fmt(sc is not None)}")
    if sc is not None:
        for key, attr in _SIDE_KEYS.items():
            lines.append(f"{key}={_fmt(getattr(sc, attr))}")
    return "\n".join(lines) + "\n"
