"""Host restoration networks, with and without the side-chain."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import ConvBlock, Conv2d, Downsample, Module, Sequential, Upsample
from .sidechain import SideChain, SideChainConfig


@dataclass
class ModelConfig:
    kind: str = "unet"           # plain | unet
    base_channels: int = 16
    depth: int = 3               # scales (unet only)
    layers: int = 6              # conv layers of the plain model, output layer included
    enc_layers: int = 4          # full-resolution encoder blocks (unet)
    in_channels: int = 3
    residual: bool = True
    side_chain: SideChainConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.side_chain, dict):
            self.side_chain = SideChainConfig(**self.side_chain)
        if self.kind not in ("plain", "unet"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        sc = self.side_chain
        if sc is not None:
            limit = self.layers - 1 if self.kind == "plain" else self.enc_layers
            if not 1 <= sc.tap_layer < sc.inject_layer <= limit:
                raise ValueError(
                    f"side-chain tap/inject ({sc.tap_layer}, {sc.inject_layer}) must satisfy "
                    f"1 <= tap < inject <= {limit} for a {self.kind} model")

    def to_dict(self):
        return asdict(self)


class Model(Module):
    """Shape-preserving restoration CNN.

    The side-chain taps the output of main layer ``tap_layer`` (1-based,
    counted in the full-resolution stage) and its fused output replaces the
    output of layer ``inject_layer``.
    """

    def __init__(self, cfg):
        self.config = cfg
        self.mode = 0
        self.last_side = None
        rng = np.random.default_rng(cfg.seed)
        C, c_in = cfg.base_channels, cfg.in_channels
        n_stem = cfg.layers - 1 if cfg.kind == "plain" else cfg.enc_layers
        self.stem = Sequential(*[ConvBlock(c_in if i == 0 else C, C, rng) for i in range(n_stem)])
        if cfg.kind == "unet":
            for s in range(1, cfg.depth):
                cs = C * 2 ** s
                setattr(self, f"down{s}", Downsample(cs // 2, cs, rng))
                setattr(self, f"enc{s}", Sequential(ConvBlock(cs, cs, rng), ConvBlock(cs, cs, rng)))
            for s in reversed(range(1, cfg.depth)):
                cs = C * 2 ** s
                setattr(self, f"up{s}", Upsample(cs, cs // 2, rng))
                setattr(self, f"dec{s}", Sequential(ConvBlock(cs, cs // 2, rng),
                                                    ConvBlock(cs // 2, cs // 2, rng)))
        self.head = Conv2d(C, c_in, 3, 1, rng)
        if cfg.side_chain is not None:
            self.snsc = SideChain(C, cfg.side_chain, rng, c_host=C)

    @property
    def has_side_chain(self):
        return self.config.side_chain is not None

    def divisor(self):
        return 2 ** (self.config.depth - 1) if self.config.kind == "unet" else 1

    def _stem(self, x, mode):
        sc = self.config.side_chain
        self.last_side = None
        tapped = None
        for i, layer in enumerate(self.stem, start=1):
            x = layer(x)
            if sc is None:
                continue
            if i == sc.tap_layer:
                tapped = x
            if i == sc.inject_layer:
                side = self.snsc(tapped, mode)
                self.last_side = side
                x = self.snsc.fuse(x, side.modulated)
        return x

    def forward(self, x, mode=None):
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        mode = self.mode if mode is None else mode
        d = self.divisor()
        if x.shape[2] % d or x.shape[3] % d:
            raise T.ShapeError("model", f"H and W must be divisible by {d}, got {x.shape[2:]}")
        h = self._stem(x, mode)
        if self.config.kind == "unet":
            skips = [h]
            for s in range(1, self.config.depth):
                h = T.relu(getattr(self, f"down{s}")(h))
                h = getattr(self, f"enc{s}")(h)
                skips.append(h)
            for s in reversed(range(1, self.config.depth)):
                h = T.relu(getattr(self, f"up{s}")(h))
                h = getattr(self, f"dec{s}")(T.concat([h, skips[s - 1]]))
        out = self.head(h)
        return T.add(x, out) if self.config.residual else out


def build_model(cfg):
    return Model(cfg)


def set_mode(model, mode):
    sc = model.config.side_chain
    if sc is None or sc.num_relevance_instances < 2:
        raise ValueError("set_mode needs a side-chain with two relevance instances")
    if mode not in range(sc.num_relevance_instances):
        raise ValueError(f"mode {mode} out of range")
    model.mode = int(mode)
    return model
