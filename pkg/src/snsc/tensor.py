"""Dense 4-D tensors with tape-free reverse-mode differentiation.

Every op returns a new :class:`Tensor` remembering its parents and a
vector-Jacobian closure. Node ids grow monotonically, so sorting reachable
nodes by id descending is a valid reverse topological order.
"""
from __future__ import annotations

import contextlib
import itertools

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes do not fit an op; ``node`` names the op."""

    def __init__(self, node, message):
        super().__init__(f"{node}: {message}")
        self.node = node


class NonDifferentiableError(RuntimeError):
    def __init__(self, nodes):
        super().__init__("graph contains non-differentiable nodes: " + ", ".join(nodes))
        self.nodes = list(nodes)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "op", "id", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.vjp = None
        self.op = "leaf"
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, dtype={self.dtype})"

    def backward(self, grad=None):
        backward(self, grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _node(data, parents, vjp, op):
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
    return out


def _topo(root):
    seen = {root.id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                seen[p.id] = p
                stack.append(p)
    return sorted(seen.values(), key=lambda t: t.id, reverse=True)


def backward(root, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Gradients from several consumers are summed.
    """
    if grad is None:
        if root.data.size != 1:
            raise ShapeError(root.op, f"backward needs a scalar root, got shape {root.shape}")
        grad = np.ones_like(root.data)
    grads = {root.id: np.asarray(grad, dtype=root.dtype)}
    for node in _topo(root):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


def graph_nodes(root):
    """All differentiable nodes reachable from ``root`` in construction order."""
    return list(reversed(_topo(root)))


# ---------------------------------------------------------------------------
# element-wise


def _per_channel(b, x, op):
    # the only broadcast allowed: a [C] vector against [N, C, H, W]
    if b.ndim == 1 and x.ndim == 4 and b.shape[0] == x.shape[1]:
        return True
    if b.shape != x.shape:
        raise ShapeError(op, f"shape mismatch {x.shape} vs {b.shape}")
    return False


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if _per_channel(b.data, a.data, "add"):
        return _node(a.data + b.data[None, :, None, None], (a, b),
                     lambda g: (g, g.sum(axis=(0, 2, 3))), "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if b.shape != a.shape:
        raise ShapeError("sub", f"shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if _per_channel(b.data, a.data, "mul"):
        bb = b.data[None, :, None, None]
        return _node(a.data * bb, (a, b),
                     lambda g: (g * bb, (g * a.data).sum(axis=(0, 2, 3))), "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x, c):
    x = as_tensor(x)
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


def square(x):
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x):
    mask = x.data > 0  # subgradient at exactly 0 is 0
    return _node(np.maximum(x.data, 0), (x,),
                 lambda g: (g * mask,), "relu")


def sum_all(x):
    """Sum of all elements as a [1, 1, 1, 1] tensor."""
    shape = x.shape
    return _node(x.data.sum(dtype=x.dtype).reshape(1, 1, 1, 1), (x,),
                 lambda g: (np.broadcast_to(g.reshape(()), shape).astype(x.dtype),), "sum")


def mean(x):
    return scale(sum_all(x), 1.0 / x.data.size)


def broadcast_spatial(x, height, width):
    """Repeat a [N, C, 1, 1] tensor over an H x W frame."""
    if x.data.ndim != 4 or x.shape[2:] != (1, 1):
        raise ShapeError("broadcast_spatial", f"expected [N, C, 1, 1], got {x.shape}")
    out = np.broadcast_to(x.data, x.shape[:2] + (height, width)).copy()
    return _node(out, (x,), lambda g: (g.sum(axis=(2, 3), keepdims=True),), "broadcast_spatial")


def concat(xs):
    """Channel concatenation."""
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != 4 or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError("concat", f"cannot concatenate {ref} with {x.shape}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def vjp(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.concatenate([x.data for x in xs], axis=1), tuple(xs), vjp, "concat")


def switch(xs, index):
    """Per-sample selection: ``out[n] = xs[index[n]][n]``.

    Inputs that no sample selects receive an exactly-zero gradient.
    """
    index = np.asarray(index, dtype=np.int64)
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise ShapeError("switch", f"shape mismatch {shape} vs {x.shape}")
    if index.shape != (shape[0],) or index.min() < 0 or index.max() >= len(xs):
        raise ShapeError("switch", f"bad index {index.tolist()} for {len(xs)} inputs")
    out = np.empty_like(xs[0].data)
    masks = []
    for k, x in enumerate(xs):
        m = index == k
        out[m] = x.data[m]
        masks.append(m)

    def vjp(g):
        res = []
        for m in masks:
            gk = np.zeros_like(g)
            gk[m] = g[m]
            res.append(gk)
        return tuple(res)

    return _node(out, tuple(xs), vjp, "switch")


def upsample_nearest(x):
    """Nearest-neighbour 2x upsampling."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def vjp(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _node(out, (x,), vjp, "upsample_nearest")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias=None, stride=1):
    """Zero-padded cross-correlation; padding is (k - 1) / 2 per side."""
    n, c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError("conv2d", f"bad kernel shape {weight.shape}")
    co, ci, k, _ = weight.shape
    if c != ci:
        raise ShapeError("conv2d", f"input has {c} channels, kernel expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError("conv2d", f"bias shape {bias.shape}, expected ({co},)")
    pad = (k - 1) // 2
    ho, wo = -(-h // stride), -(-w // stride)
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    # columns laid out [C, k, k, N, Ho, Wo] so copies run along contiguous rows
    xt = x.data.transpose(1, 0, 2, 3)
    if k == 1:
        cols = np.ascontiguousarray(xt[:, :, ::stride, ::stride]).reshape(c, -1)
    else:
        xp = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xp[:, :, i : i + hs : stride, j : j + ws : stride]
        cols = cols.reshape(c * k * k, -1)
    wmat = weight.data.reshape(co, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, -1)
        gw = (gmat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(c, k, k, n, ho, wo)
            gxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + hs : stride, j : j + ws : stride] += dcols[:, i, j]
            gx = np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w].transpose(1, 0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, vjp, "conv2d")


# ---------------------------------------------------------------------------
# normalisation, pooling, loss


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation.

    In training mode the batch statistics are used and the running buffers
    (plain ndarrays) are updated in place.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm", f"affine shape {gamma.shape} for {c} channels")
    m = n * h * w
    if training:
        if m < 2:
            raise ShapeError("batchnorm", "training mode needs batch*H*W >= 2")
        mu = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean, running_var
        xc = x.data - mu[None, :, None, None]
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            gx = (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            gx = gx * inv[None, :, None, None]
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return _node(out.astype(x.dtype), (x, gamma, beta), vjp, "batchnorm")


def gwap(estimate, validity, epsilon):
    """Global weighted-average pooling.

    ``state[n, s] = sum(estimate * validity) / (sum(validity) + epsilon)``
    over the spatial axes, returned as [N, S, 1, 1].
    """
    if estimate.shape != validity.shape or estimate.data.ndim != 4:
        raise ShapeError("gwap", f"estimate {estimate.shape} vs validity {validity.shape}")
    if not epsilon >= 0:
        raise ValueError("gwap: epsilon must be non-negative")
    if (validity.data < 0).any():
        raise ValueError("gwap: validity must be non-negative (apply ReLU first)")
    num = (estimate.data * validity.data).sum(axis=(2, 3), keepdims=True)
    den = validity.data.sum(axis=(2, 3), keepdims=True) + epsilon
    state = num / den

    def vjp(g):
        gd = g / den
        return gd * validity.data, gd * (estimate.data - state)

    return _node(state, (estimate, validity), vjp, "gwap")


def l1_loss(pred, target):
    """Mean absolute difference; the gradient is sign(pred - target) / count."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("l1_loss", f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.abs(diff).sum(dtype=np.promote_types(diff.dtype, np.float64)) / count
    sign = np.sign(diff).astype(pred.dtype)

    def vjp(g):
        gs = g.reshape(()) * sign / count
        return gs, -gs

    return _node(np.asarray(out, dtype=pred.dtype).reshape(1, 1, 1, 1), (pred, target), vjp, "l1_loss")


def custom(name, fn, inputs, vjp=None):
    """Wrap an arbitrary numpy function as a graph node.

    Without a ``vjp`` the node is non-differentiable: gradients stop there
    and :func:`snsc.gradcheck.gradcheck` refuses the graph.
    """
    inputs = tuple(as_tensor(x) for x in inputs)
    out = fn(*[x.data for x in inputs])
    if vjp is None:
        return _node(out, inputs, lambda g: (None,) * len(inputs), f"nondiff:{name}")
    return _node(out, inputs, lambda g: vjp(g, *[x.data for x in inputs]), f"custom:{name}")


HINGE_OPS = ("relu", "l1_loss")


def forward_backward(fn, inputs, params=None, wrt=()):
    """Run ``fn(**inputs)`` and differentiate its loss.

    ``fn`` returns either a scalar loss tensor or ``(loss, outputs)`` where
    ``outputs`` is a dict of named tensors. Gradients are reported for every
    trainable parameter in ``params`` (a name -> Tensor mapping) and for
    every input named in ``wrt``. Leaf gradients are reset before the pass,
    so repeated calls are pure.
    """
    params = params or {}
    tensors = {k: Tensor(v if not isinstance(v, Tensor) else v.data, requires_grad=k in wrt)
               for k, v in inputs.items()}
    for p in params.values():
        p.grad = None
    res = fn(**tensors)
    loss, outputs = (res if isinstance(res, tuple) else (res, {}))
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(loss.op, f"loss must have shape (1, 1, 1, 1), got {loss.shape}")
    backward(loss)
    grads = {}
    for name, p in params.items():
        if p.requires_grad:
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    for name in wrt:
        t = tensors[name]
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    outputs = {"loss": loss, **outputs}
    return {k: v.data for k, v in outputs.items()}, grads
