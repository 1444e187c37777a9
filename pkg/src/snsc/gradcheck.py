"""Central-difference gradient checking for graphs built from :mod:`snsc.tensor`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class GradcheckResult:
    max_relative_error: float
    checked: int
    skipped: list = field(default_factory=list)  # (name, flat index) near a hinge

    def __float__(self):
        return self.max_relative_error


def _hinge_signature(loss):
    sig = []
    for node in T.graph_nodes(loss):
        if node.op in T.HINGE_OPS:
            # the first parent is the hinge argument (relu input, l1 residual)
            arg = node.parents[0].data
            if node.op == "l1_loss":
                arg = arg - node.parents[1].data
            sig.append(np.sign(arg))
    return sig


def _same_signature(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(fn, point, step=1e-5, params=None, extended=True):
    """Compare analytic gradients of ``fn`` with central differences.

    ``fn(**tensors)`` must return a scalar [1, 1, 1, 1] tensor. ``point``
    maps input names to float64 arrays; every input is differentiated, as is
    every entry of ``params`` (name -> leaf Tensor, perturbed in place).

    Coordinates whose perturbation flips the sign of any ReLU or L1 argument
    sit within ``step`` of a kink; they are skipped and listed.

    The analytic gradient is always float64. With ``extended`` the perturbed
    evaluations run in ``np.longdouble``: in float64 the difference of two
    O(1) losses carries ~1e-16 of round-off, which over 2*step swamps any
    coordinate whose gradient is below ~1e-6. Where long double is just
    float64 this changes nothing.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    params = dict(params or {})
    leaves = {k: T.Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in point.items()}
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters; {name} is {p.dtype}")
    targets = {**leaves, **params}
    for t in targets.values():
        t.grad = None

    loss = fn(**leaves)
    if loss.shape != (1, 1, 1, 1):
        raise T.ShapeError(loss.op, "gradcheck needs a scalar loss")
    bad = [n.op for n in T.graph_nodes(loss) if n.op.startswith("nondiff:")]
    if bad:
        raise T.NonDifferentiableError(bad)
    T.backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in targets.items()}

    def evaluate_with_sig():
        out = fn(**leaves)
        return out.data.reshape(()), _hinge_signature(out)

    work = np.longdouble if extended else np.float64
    saved = {k: t.data for k, t in targets.items()}
    try:
        for t in targets.values():
            t.data = t.data.astype(work)
        worst, checked, skipped = _compare(targets, analytic, evaluate_with_sig, step)
    finally:
        for k, t in targets.items():
            t.data = saved[k]
    return GradcheckResult(float(worst), checked, skipped)


def _compare(targets, analytic, evaluate_with_sig, step):
    base_sig = evaluate_with_sig()[1]
    worst = 0.0
    checked = 0
    skipped = []
    for name, t in targets.items():
        flat = t.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp, sp = evaluate_with_sig()
            flat[i] = orig - step
            fm, sm = evaluate_with_sig()
            flat[i] = orig
            if not (_same_signature(sp, base_sig) and _same_signature(sm, base_sig)):
                skipped.append((name, i))
                continue
            numeric = (fp - fm) / (2 * step)
            denom = max(abs(ga[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ga[i] - numeric) / denom)
            checked += 1
    return worst, checked, skipped
