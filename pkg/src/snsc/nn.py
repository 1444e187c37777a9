"""Trainable building blocks and the Adam optimizer."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor, l1_loss  # noqa: F401  (re-exported)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class IncompatibleStateError(KeyError):
    def __init__(self, missing, extra, mismatched=()):
        self.missing, self.extra, self.mismatched = list(missing), list(extra), list(mismatched)
        parts = []
        if self.missing:
            parts.append("missing: " + ", ".join(self.missing))
        if self.extra:
            parts.append("unexpected: " + ", ".join(self.extra))
        for name, want, got in self.mismatched:
            parts.append(f"{name}: expected shape {want}, got {got}")
        super().__init__("incompatible parameters; " + "; ".join(parts))

    def __str__(self):
        return self.args[0]


def parameter(data):
    return Tensor(data, requires_grad=True)


class Module:
    """Container whose parameters are discovered from its attributes.

    Attribute order is registration order, which fixes the parameter order
    in checkpoints. Buffers are plain ndarrays listed in ``_buffers``.
    """

    training = True
    _buffers = ()

    def named_parameters(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{key}."))
        return out

    def named_buffers(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            if key in self._buffers:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.named_buffers(f"{prefix}{key}."))
        return out

    def state_dict(self):
        """Parameters then buffers, as float arrays in registration order."""
        out = {k: p.data for k, p in self.named_parameters().items()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state):
        params, buffers = self.named_parameters(), self.named_buffers()
        expected = list(params) + list(buffers)
        missing = [k for k in expected if k not in state]
        extra = [k for k in state if k not in params and k not in buffers]
        if missing or extra:
            raise IncompatibleStateError(missing, extra)
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise IncompatibleStateError([], [], [(k, p.shape, state[k].shape)])
            p.data = np.array(state[k], dtype=p.dtype)
        for m_name, m in self._owners_of_buffers():
            for b in m._buffers:
                key = m_name + b
                arr = getattr(m, b)
                if state[key].shape != arr.shape:
                    raise IncompatibleStateError([], [], [(key, arr.shape, state[key].shape)])
                setattr(m, b, np.array(state[key], dtype=arr.dtype))

    def _owners_of_buffers(self, prefix=""):
        if self._buffers:
            yield prefix, self
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield from value._owners_of_buffers(f"{prefix}{key}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, flag=True):
        for m in self.modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Cast parameters and buffers in place."""
        for m in self.modules():
            for key, value in vars(m).items():
                if isinstance(value, Tensor):
                    value.data = value.data.astype(dtype)
                elif key in m._buffers:
                    setattr(m, key, value.astype(dtype))
        return self

    def num_parameters(self):
        return int(sum(p.data.size for p in self.named_parameters().values()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Sequential(Module):
    def __init__(self, *layers):
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)
        self._n = len(layers)

    def __iter__(self):
        return (getattr(self, str(i)) for i in range(self._n))

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        if not -self._n <= i < self._n:
            raise IndexError(i)
        return getattr(self, str(i % self._n))

    def forward(self, x):
        for layer in self:
            x = layer(x)
        return x


class Conv2d(Module):
    def __init__(self, c_in, c_out, k=3, stride=1, rng=None, dtype=np.float32):
        if k not in (1, 3) or stride not in (1, 2):
            raise ValueError(f"unsupported conv k={k} stride={stride}")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = math.sqrt(1.0 / (c_in * k * k))
        self.weight = parameter(rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(dtype))
        self.bias = parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, c, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.weight = parameter(np.ones(c, dtype=dtype))
        self.bias = parameter(np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return T.batchnorm(x, self.weight, self.bias, self.running_mean, self.running_var,
                           self.training, self.momentum, self.eps)


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class ConvBlock(Module):
    """3x3 conv -> batchnorm -> optional ReLU."""

    def __init__(self, c_in, c_out, rng, relu=True, stride=1, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, stride, rng, dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)
        self.relu = relu

    def forward(self, x):
        y = self.bn(self.conv(x))
        return T.relu(y) if self.relu else y


class Downsample(Module):
    """Trainable stride-2 3x3 convolution."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, 2, rng, dtype)

    def forward(self, x):
        h, w = x.shape[2:]
        if h % 2 or w % 2:
            raise T.ShapeError("resample", f"down needs even extents, got {h}x{w}")
        return self.conv(x)


class Upsample(Module):
    """Nearest-neighbour 2x followed by a trainable 3x3 convolution."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, 1, rng, dtype)

    def forward(self, x):
        return self.conv(T.upsample_nearest(x))


def resample(x, module):
    """Apply a :class:`Downsample` or :class:`Upsample` block."""
    return module(x)


class Adam:
    """Adam with bias-corrected moments.

    ``params`` maps names to leaf tensors; ``step`` reads their ``.grad``.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        grads = {}
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(name)
            grads[name] = p.grad
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = self.params[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)

    def state(self):
        return self.step_count, self.m, self.v

    def load_state(self, step_count, m, v):
        self.step_count = int(step_count)
        for k in self.params:
            self.m[k] = np.array(m[k], dtype=self.params[k].dtype)
            self.v[k] = np.array(v[k], dtype=self.params[k].dtype)
