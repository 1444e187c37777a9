"""Gradient checks for every differentiable op, at random float64 points."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .gradcheck import gradcheck
from .nn import BatchNorm2d, Conv2d, Downsample, Upsample
from .sidechain import Fuse, SideChain, SideChainConfig


def _project(out, rng):
    # random projection so that no op has an identically-zero summed gradient
    R = rng.standard_normal(out.shape)
    return T.sum_all(T.mul(out, T.Tensor(R)))


def _with_params(module):
    module.astype(np.float64)
    return module.named_parameters()


def case_conv2d(rng):
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    conv = Conv2d(3, 4, k, stride, rng)
    params = _with_params(conv)
    conv.bias.data[:] = rng.standard_normal(4)
    point = {"x": rng.standard_normal((2, 3, 5, 6))}
    return (lambda x: _project(conv(x), np.random.default_rng(7))), point, params


def case_batchnorm(rng):
    bn = BatchNorm2d(3)
    params = _with_params(bn)
    bn.weight.data[:] = rng.uniform(0.5, 2.0, 3)
    bn.bias.data[:] = rng.standard_normal(3)
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
    bn.train(bool(rng.integers(2)))
    point = {"x": rng.standard_normal((3, 3, 4, 4)) * 2 + 1}
    return (lambda x: _project(bn(x), np.random.default_rng(7))), point, params


def case_relu(rng):
    point = {"x": rng.standard_normal((2, 3, 4, 4))}
    return (lambda x: _project(T.relu(x), np.random.default_rng(7))), point, {}


def case_resample(rng):
    if rng.integers(2):
        block = Downsample(3, 4, rng)
        shape = (2, 3, 6, 4)
    else:
        block = Upsample(3, 2, rng)
        shape = (2, 3, 3, 4)
    params = _with_params(block)
    point = {"x": rng.standard_normal(shape)}
    return (lambda x: _project(block(x), np.random.default_rng(7))), point, params


def case_gwap(rng):
    # strictly positive so that +-step stays inside the domain; exact zeros
    # are exercised through the ReLU gate of the side-chain
    point = {"estimate": rng.standard_normal((2, 3, 4, 5)),
             "validity": rng.uniform(0.05, 1.0, (2, 3, 4, 5))}
    return (lambda estimate, validity: _project(T.gwap(estimate, validity, 1e-4),
                                                np.random.default_rng(7))), point, {}


def case_side_chain(rng):
    cfg = SideChainConfig(S=2, depth=2, num_relevance_instances=int(rng.integers(1, 3)))
    chain = SideChain(3, cfg, rng)
    params = _with_params(chain)
    point = {"x": rng.standard_normal((2, 3, 5, 5))}
    # Checked with running statistics. In batch-statistics mode a bias that
    # feeds a batchnorm cancels exactly, so its gradient is identically zero
    # and the central difference only resolves round-off (train mode is
    # covered by the batchnorm case). The statistics are calibrated on the
    # point itself so every block sees unit-scale activations; otherwise the
    # estimate map is nearly flat and the validity gradients, which scale
    # with (estimate - state), drop to round-off level.
    bns = [m for m in chain.modules() if isinstance(m, BatchNorm2d)]
    for m in bns:
        m.momentum = 1.0
    chain.train()
    with T.no_grad():
        chain(T.Tensor(point["x"]), 0)
    for m in bns:
        m.momentum = 0.1
    # keep part of the validity gate open
    chain.validity[-1].bn.bias.data[:] = rng.uniform(0.0, 1.0, cfg.S)
    chain.eval()
    mode = int(rng.integers(cfg.num_relevance_instances))
    return (lambda x: _project(chain(x, mode).modulated, np.random.default_rng(7))), point, params


def case_fuse(rng):
    f = Fuse(3, 2, rng)
    params = _with_params(f)
    f.conv.weight.data[:] = rng.standard_normal(f.conv.weight.shape)
    point = {"main": rng.standard_normal((2, 3, 4, 4)), "modulated": rng.standard_normal((2, 2, 4, 4))}
    return (lambda main, modulated: _project(f(main, modulated), np.random.default_rng(7))), point, params


def case_l1_loss(rng):
    point = {"pred": rng.standard_normal((2, 3, 4, 4)), "target": rng.standard_normal((2, 3, 4, 4))}
    return (lambda pred, target: T.l1_loss(pred, target)), point, {}


CASES = {
    "conv2d": case_conv2d,
    "batchnorm": case_batchnorm,
    "relu": case_relu,
    "resample": case_resample,
    "gwap": case_gwap,
    "side_chain_forward": case_side_chain,
    "fuse": case_fuse,
    "l1_loss": case_l1_loss,
}


# Central-difference step per op. Piecewise-linear ops have no truncation
# error, so a large step costs nothing; curved ops (batch statistics, the
# GWAP quotient) need a small one, affordable because the checker differences
# in extended precision.
STEPS = {
    "conv2d": 1e-3,
    "batchnorm": 1e-6,
    "relu": 1e-3,
    "resample": 1e-3,
    "gwap": 1e-5,
    "side_chain_forward": 3e-7,
    "fuse": 1e-3,
    "l1_loss": 1e-3,
}


def run_checks(ops=None, seed=0, points=10, step=None):
    """Return ``{op: [GradcheckResult, ...]}`` over ``points`` random points each.

    ``step`` overrides the per-op default in :data:`STEPS`.
    """
    ops = list(CASES) if ops is None else list(ops)
    unknown = [o for o in ops if o not in CASES]
    if unknown:
        raise KeyError(f"unknown op(s) {unknown}; choose from {list(CASES)}")
    results = {}
    for op in ops:
        # keyed by the op, so a single-op run sees the same points as the full suite
        rng = np.random.default_rng([seed, list(CASES).index(op)])
        results[op] = []
        for _ in range(points):
            fn, point, params = CASES[op](rng)
            h = STEPS[op] if step is None else step
            results[op].append(gradcheck(fn, point, step=h, params=params))
    return results
