"""Parameterized layer normalization and batch normalization.

Both norms use population variance, and sigma is defined as the exact
forward denominator sqrt(var + eps). The unrolled-coefficient analysis
in :mod:`skipnorm.ratio` relies on capturing that same denominator, so
the reconstruction identity is exact rather than eps-approximate.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, _accumulate

__all__ = ["LayerNormParams", "BatchNormParams", "layer_norm", "batch_norm"]

DEFAULT_EPS = 1e-5


@dataclass
class LayerNormParams:
    """Trainable gain/bias of one layer-normalization instance."""

    gain: Tensor
    bias: Tensor
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.gain.data.ndim != 1 or self.gain.data.shape != self.bias.data.shape:
            raise DimensionError("gain and bias must be 1-D vectors of equal length")
        if self.eps <= 0:
            raise ContractError("eps must be positive")

    @classmethod
    def create(cls, d, eps=DEFAULT_EPS):
        """Fresh parameters: gain 1, bias 0."""
        return cls(
            gain=Tensor(np.ones(d), requires_grad=True),
            bias=Tensor(np.zeros(d), requires_grad=True),
            eps=eps,
        )

    @property
    def dim(self):
        return self.gain.data.shape[0]


@dataclass
class BatchNormParams:
    """Batch-norm parameters plus running statistics.

    ``mode`` selects between mini-batch statistics ("training", running
    stats updated as an exponential moving average) and the frozen
    running statistics ("inference", output independent of the batch).
    """

    gain: Tensor
    bias: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = DEFAULT_EPS
    mode: str = "training"

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ContractError("momentum must lie in (0, 1)")
        if self.eps <= 0:
            raise ContractError("eps must be positive")
        d = self.gain.data.shape[0]
        if self.bias.data.shape != (d,) or self.running_mean.shape != (d,) or self.running_var.shape != (d,):
            raise DimensionError("gain, bias, and running statistics must share one length")

    @classmethod
    def create(cls, d, momentum=0.1, eps=DEFAULT_EPS):
        return cls(
            gain=Tensor(np.ones(d), requires_grad=True),
            bias=Tensor(np.zeros(d), requires_grad=True),
            running_mean=np.zeros(d),
            running_var=np.ones(d),
            momentum=momentum,
            eps=eps,
        )

    @property
    def dim(self):
        return self.gain.data.shape[0]


def _require_2d(x, d, opname):
    if x.data.ndim != 2:
        raise DimensionError(f"{opname} expects [batch, d] input, got {x.data.shape}")
    if x.data.shape[1] != d:
        raise DimensionError(f"{opname}: input width {x.data.shape[1]} != parameter width {d}")


def layer_norm(x, p, stats_out=None):
    """Per-row normalization y = gain * (x - mu) / sigma + bias.

    mu is the row mean and sigma = sqrt(population variance + eps), the
    denominator actually used in forward. If ``stats_out`` is a list,
    the per-row (mu, sigma) pair is appended to it so callers can record
    a decomposition witness.
    """
    _require_2d(x, p.dim, "layer_norm")
    w, b = p.gain, p.bias
    d = x.data.shape[1]

    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    sigma = np.sqrt(var + p.eps)
    xhat = centered / sigma
    out = Tensor(
        w.data * xhat + b.data,
        x.requires_grad or w.requires_grad or b.requires_grad,
        (x, w, b),
        "layer_norm",
    )
    if stats_out is not None:
        stats_out.append((mu[:, 0].copy(), sigma[:, 0].copy()))

    def backward(g):
        _accumulate(w, (g * xhat).sum(axis=0))
        _accumulate(b, g.sum(axis=0))
        dxhat = g * w.data
        # full derivative through mu and sigma, per row
        dx = (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        ) / sigma
        _accumulate(x, dx)

    out._backward = backward
    return out


def batch_norm(x, p):
    """Per-feature normalization over the batch axis.

    Training mode normalizes by mini-batch statistics and updates the
    running statistics in place; inference mode uses only the running
    statistics, so the output of a row never depends on the rest of the
    batch.
    """
    _require_2d(x, p.dim, "batch_norm")
    w, b = p.gain, p.bias
    requires = x.requires_grad or w.requires_grad or b.requires_grad

    if p.mode == "inference":
        denom = np.sqrt(p.running_var + p.eps)
        xhat = (x.data - p.running_mean) / denom
        out = Tensor(w.data * xhat + b.data, requires, (x, w, b), "batch_norm")

        def backward_inf(g):
            _accumulate(w, (g * xhat).sum(axis=0))
            _accumulate(b, g.sum(axis=0))
            _accumulate(x, g * (w.data / denom))

        out._backward = backward_inf
        return out

    if p.mode != "training":
        raise ContractError(f"unknown batch_norm mode {p.mode!r}")
    n = x.data.shape[0]
    if n < 2:
        raise ContractError("batch_norm training mode requires batch size >= 2")

    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = (centered * centered).mean(axis=0)
    sigma = np.sqrt(var + p.eps)
    xhat = centered / sigma
    out = Tensor(w.data * xhat + b.data, requires, (x, w, b), "batch_norm")

    m = p.momentum
    p.running_mean = (1.0 - m) * p.running_mean + m * mu
    p.running_var = (1.0 - m) * p.running_var + m * var

    def backward_train(g):
        _accumulate(w, (g * xhat).sum(axis=0))
        _accumulate(b, g.sum(axis=0))
        dxhat = g * w.data
        dx = (
            dxhat
            - dxhat.mean(axis=0)
            - xhat * (dxhat * xhat).mean(axis=0)
        ) / sigma
        _accumulate(x, dx)

    out._backward = backward_train
    return out
