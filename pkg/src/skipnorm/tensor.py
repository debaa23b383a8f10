"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape: every operation appends a node holding the
backward rule as a closure over the saved forward values. Calling
``backward()`` on an output replays the reachable part of the tape in
strict reverse creation order, accumulating gradients additively into
``.grad`` of every node that requires them (intermediates included).

Everything is double precision. Broadcasting is deliberately restricted
to the one pattern the residual constructions need: a 1-D vector of
length ``d`` combined with an array whose trailing axis is ``d``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "add",
    "scale",
    "ewmul",
    "matmul",
    "relu",
    "tsum",
    "softmax_cross_entropy",
    "gradcheck",
    "GradCheckReport",
]

_ids = itertools.count()


class Tensor:
    """A node of the differentiation tape.

    ``data`` is always a float64 ndarray. ``grad`` is lazily created and
    accumulates additively, so two backward passes without a reset sum
    their contributions. Leaf tensors are created directly; interior
    nodes are created by the operations below and carry a backward
    closure plus references to their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = None
        self._op = _op
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, seed=None):
        """Run reverse-mode differentiation from this node.

        ``seed`` is the upstream gradient; it defaults to 1.0 and is then
        only valid for scalar outputs. Nodes are visited exactly once, in
        reverse creation order, which is a valid topological order
        because the tape is built dynamically.
        """
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise ContractError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise DimensionError(f"seed shape {seed.shape} != output shape {self.data.shape}")

        nodes = _reachable(self)
        self.accumulate_grad(seed)
        for node in sorted(nodes, key=lambda t: t._id, reverse=True):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # convenience operators used by the demos and the harness
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return ewmul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _reachable(root):
    seen = {root}
    stack = [root]
    while stack:
        for p in stack.pop()._parents:
            if p not in seen and p.requires_grad:
                seen.add(p)
                stack.append(p)
    return seen


def _accumulate(t, g):
    if t.requires_grad:
        t.accumulate_grad(g)


def _check_binary_shapes(a, b, opname):
    """Equal shapes, or b a 1-D vector matching a's trailing axis."""
    if a.data.shape == b.data.shape:
        return False
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        return True
    raise DimensionError(
        f"{opname}: shape {b.data.shape} is neither equal to {a.data.shape} "
        f"nor broadcastable over its trailing axis"
    )


def _reduce_to_vector(g, ndim):
    # sum out the leading axes a trailing-axis broadcast expanded over
    return g.sum(axis=tuple(range(ndim - 1))) if ndim > 1 else g


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    """Elementwise sum, the additive combination of shortcut and residual."""
    a, b = _as_tensor(a), _as_tensor(b)
    broadcast = _check_binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad, (a, b), "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, _reduce_to_vector(g, a.data.ndim) if broadcast else g)

    out._backward = backward
    return out


def scale(a, c):
    """Multiply by a fixed real scalar (the shortcut modulating factor)."""
    c = float(c)
    out = Tensor(c * a.data, a.requires_grad, (a,), "scale")

    def backward(g):
        _accumulate(a, c * g)

    out._backward = backward
    return out


def ewmul(a, b):
    """Entrywise product; b may be a per-feature vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    broadcast = _check_binary_shapes(a, b, "ewmul")
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad, (a, b), "ewmul")

    def backward(g):
        _accumulate(a, g * b.data)
        gb = g * a.data
        _accumulate(b, _reduce_to_vector(gb, a.data.ndim) if broadcast else gb)

    out._backward = backward
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad, (a, b), "matmul")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = backward
    return out


def relu(a):
    # gradient at exactly 0 is defined as 0, hence the strict inequality
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), a.requires_grad, (a,), "relu")

    def backward(g):
        _accumulate(a, g * mask)

    out._backward = backward
    return out


def tsum(a):
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(a.data.sum(), a.requires_grad, (a,), "sum")

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    out._backward = backward
    return out


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer class labels.

    Computed with max-subtraction so arbitrarily large logits cannot
    overflow. The backward rule is the closed form
    (softmax - onehot) / batch.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be [batch, classes], got {logits.data.shape}")
    labels = np.asarray(labels)
    batch, classes = logits.data.shape
    if labels.shape != (batch,):
        raise DimensionError(f"labels must have shape ({batch},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise IndexError(f"label out of range [0, {classes})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logprobs = shifted - logsumexp
    loss = -logprobs[np.arange(batch), labels].mean()
    out = Tensor(loss, logits.requires_grad, (logits,), "softmax_xent")

    softmax = np.exp(logprobs)

    def backward(g):
        delta = softmax.copy()
        delta[np.arange(batch), labels] -= 1.0
        _accumulate(logits, float(g) * delta / batch)

    out._backward = backward
    return out


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    max_rel_err: float
    tol: float
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_err <= self.tol


def gradcheck(f, inputs, eps=1e-5, tol=1e-4):
    """Check analytic gradients of a scalar-valued tensor function.

    Every coordinate of every input is perturbed by +-eps and the
    central difference is compared against the gradient produced by
    ``backward()``. Relative error is |a - n| / max(1e-8, |a| + |n|);
    the check passes iff the maximum over all coordinates is <= tol.
    """
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if out.data.size != 1:
        raise ContractError("gradcheck requires a scalar-valued function")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    per_input = []
    for t, a in zip(inputs, analytic):
        worst = 0.0
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*inputs).data)
            flat[i] = orig - eps
            fm = float(f(*inputs).data)
            flat[i] = orig
            n = (fp - fm) / (2.0 * eps)
            rel = abs(aflat[i] - n) / max(1e-8, abs(aflat[i]) + abs(n))
            worst = max(worst, rel)
        per_input.append(worst)

    return GradCheckReport(max(per_input, default=0.0), tol, per_input)
