"""Self-normalization side-chain.

Compressed features feed three shallow sub-networks. ``estimate`` and
``validity`` are pooled by global weighted averaging into a per-image state
vector; ``relevance`` localizes that state before it is fused back into the
host network with a point-wise convolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .nn import ConvBlock, Conv2d, Module, Sequential
from .tensor import gwap  # noqa: F401  (re-exported)


@dataclass
class SideChainConfig:
    S: int = 8
    depth: int = 2
    epsilon: float = 1e-4
    tap_layer: int = 2
    inject_layer: int = 4
    num_relevance_instances: int = 1
    width: int | None = None     # hidden width of the sub-networks; None means S

    def __post_init__(self):
        if self.S < 1:
            raise ValueError("S must be >= 1")
        if self.width is not None and self.width < 1:
            raise ValueError("width must be >= 1")
        if not 1 <= self.depth <= 3:
            raise ValueError("depth must be in [1, 3]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tap_layer < self.inject_layer:
            raise ValueError("tap_layer must precede inject_layer")
        if self.num_relevance_instances not in (1, 2):
            raise ValueError("num_relevance_instances must be 1 or 2")

    @property
    def hidden(self):
        return self.S if self.width is None else self.width

    def to_dict(self):
        return asdict(self)


@dataclass
class SideChainOutputs:
    state: T.Tensor        # [N, S, 1, 1]
    validity: T.Tensor     # [N, S, H, W], post-ReLU
    estimate: T.Tensor
    relevance: T.Tensor
    modulated: T.Tensor


def _widths(S, hidden, depth):
    chans = [S] + [hidden] * (depth - 1) + [S]
    return list(zip(chans[:-1], chans[1:]))


def _subnet(S, hidden, depth, rng, final_relu, dtype):
    return Sequential(*[ConvBlock(a, b, rng, relu=(i < depth - 1 or final_relu), dtype=dtype)
                        for i, (a, b) in enumerate(_widths(S, hidden, depth))])


class SideChain(Module):
    def __init__(self, c_in, cfg, rng=None, dtype=np.float32, c_host=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        S, hid, d = cfg.S, cfg.hidden, cfg.depth
        self.compress = Conv2d(c_in, S, 1, 1, rng, dtype)
        self.estimate = _subnet(S, hid, d, rng, False, dtype)
        # the final ReLU of the validity branch is the pooling-weight gate
        self.validity = _subnet(S, hid, d, rng, True, dtype)
        self.relevance = Sequential(*[_subnet(S, hid, d, rng, False, dtype)
                                      for _ in range(cfg.num_relevance_instances)])
        if c_host is not None:
            self.fuse = Fuse(c_host, S, rng, dtype)

    def forward(self, features, mode=0):
        """``mode`` is an int or a per-sample int array selecting the relevance instance."""
        n_inst = self.cfg.num_relevance_instances
        modes = np.broadcast_to(np.asarray(mode, dtype=np.int64), (features.shape[0],))
        if modes.min() < 0 or modes.max() >= n_inst:
            raise ValueError(f"mode {mode} out of range for {n_inst} relevance instance(s)")
        z = self.compress(features)
        est = self.estimate(z)
        val = self.validity(z)
        state = T.gwap(est, val, self.cfg.epsilon)
        if n_inst == 1:
            rel = self.relevance[0](z)
        else:
            rel = T.switch([inst(z) for inst in self.relevance], modes)
        h, w = features.shape[2:]
        modulated = T.mul(T.broadcast_spatial(state, h, w), rel)
        return SideChainOutputs(state, val, est, rel, modulated)


class Fuse(Module):
    """Concatenate main and side-chain channels, then 1x1 conv back to C."""

    def __init__(self, c, S, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv = Conv2d(c + S, c, 1, 1, rng, dtype)
        # start as the identity on the main branch so attaching the chain
        # does not disturb the host network at initialization
        w = self.conv.weight.data
        w[:, :c] = 0
        w[np.arange(c), np.arange(c)] = 1

    def forward(self, main, modulated):
        if main.shape[2:] != modulated.shape[2:] or main.shape[0] != modulated.shape[0]:
            raise T.ShapeError("fuse", f"spatial mismatch {main.shape} vs {modulated.shape}")
        return self.conv(T.concat([main, modulated]))


def fuse(main, modulated, module):
    return module(main, modulated)


def param_count(cfg, c_in):
    """Trainable parameters of the side-chain alone (fuse excluded)."""
    S = cfg.S
    compress = c_in * S + S
    # per block: 3x3 conv weights and bias, then batchnorm gamma and beta
    subnet = sum(9 * a * b + b + 2 * b for a, b in _widths(S, cfg.hidden, cfg.depth))
    return compress + (2 + cfg.num_relevance_instances) * subnet


def fuse_param_count(c, S):
    return (c + S) * c + c
