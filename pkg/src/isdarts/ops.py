"""Candidate operation blocks.

Parameterized spatial kinds follow the ReLU -> Conv -> Norm ordering used by the
NAS-Bench-201 and DARTS search spaces.  Separable convolutions repeat that
stage twice with a depthwise + pointwise convolution pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .errors import ConfigError, DimensionError
from .optim import Parameter
from .tensor import Tensor, default_dtype

EDGE_KINDS = (
    "zero",
    "skip",
    "conv1x1",
    "conv3x3",
    "avg_pool3x3",
    "max_pool3x3",
    "sep_conv3x3",
    "sep_conv5x5",
    "dil_conv3x3",
    "dil_conv5x5",
)
OTHER_KINDS = ("linear", "global_avg_pool", "elementwise_add")
PARAMETER_FREE = frozenset({"zero", "skip", "avg_pool3x3", "max_pool3x3"})

# kind -> (kernel, dilation)
_GEOMETRY = {
    "conv1x1": (1, 1),
    "conv3x3": (3, 1),
    "avg_pool3x3": (3, 1),
    "max_pool3x3": (3, 1),
    "sep_conv3x3": (3, 1),
    "sep_conv5x5": (5, 1),
    "dil_conv3x3": (3, 2),
    "dil_conv5x5": (5, 2),
}


@dataclass(frozen=True)
class OperationDescriptor:
    kind: str
    c_in: int = 1
    c_out: int = 1
    stride: int = 1
    padding: Optional[int] = None
    norm: bool = True
    affine: bool = False

    def __post_init__(self):
        if self.kind not in EDGE_KINDS + OTHER_KINDS:
            raise ConfigError(f"unknown operation kind {self.kind!r}", "kind")
        if self.padding is None and self.kind in _GEOMETRY:
            k, d = _GEOMETRY[self.kind]
            object.__setattr__(self, "padding", d * (k - 1) // 2)
        if self.kind == "skip" and (self.stride != 1 or self.c_in != self.c_out):
            raise ConfigError("skip needs stride 1 and c_in == c_out", "kind")
        if self.kind in ("avg_pool3x3", "max_pool3x3") and self.c_in != self.c_out:
            raise ConfigError("pooling cannot change the channel count", "kind")

    @property
    def kernel(self) -> int:
        return _GEOMETRY.get(self.kind, (1, 1))[0]

    @property
    def dilation(self) -> int:
        return _GEOMETRY.get(self.kind, (1, 1))[1]

    @property
    def parameterized(self) -> bool:
        return self.kind not in PARAMETER_FREE and self.kind not in ("global_avg_pool", "elementwise_add")


def describe(kind: str, channels: int, stride: int = 1) -> OperationDescriptor:
    return OperationDescriptor(kind, c_in=channels, c_out=channels, stride=stride)


class NormState:
    """Running statistics (and optional affine parameters) of one norm stage."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5,
                 affine: bool = False, name: str = ""):
        dtype = default_dtype()
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma") if affine else None
        self.beta = Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta") if affine else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.batch_norm(
            x, self.running_mean, self.running_var, training, self.momentum, self.eps,
            None if self.gamma is None else self.gamma.value,
            None if self.beta is None else self.beta.value,
        )

    def params(self) -> list:
        return [] if self.gamma is None else [self.gamma, self.beta]

    def copy(self) -> "NormState":
        new = NormState.__new__(NormState)
        new.running_mean = self.running_mean.copy()
        new.running_var = self.running_var.copy()
        new.momentum, new.eps, new.name = self.momentum, self.eps, self.name
        new.gamma = None if self.gamma is None else _copy_param(self.gamma)
        new.beta = None if self.beta is None else _copy_param(self.beta)
        return new


def _copy_param(p: Parameter) -> Parameter:
    q = Parameter(p.data.copy(), p.name)
    q.momentum_buffer = p.momentum_buffer.copy()
    return q


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


def init_params(desc: OperationDescriptor, rng: np.random.Generator, prefix: str = "") -> list[Parameter]:
    """Fresh parameters for ``desc`` in the order :func:`apply_op` consumes them."""
    k, ci, co = desc.kernel, desc.c_in, desc.c_out
    kind = desc.kind
    if kind in ("conv1x1", "conv3x3"):
        return [Parameter(kaiming_uniform(rng, (co, ci, k, k), ci * k * k), f"{prefix}w")]
    if kind.startswith("sep_conv"):
        return [
            Parameter(kaiming_uniform(rng, (ci, 1, k, k), k * k), f"{prefix}dw1"),
            Parameter(kaiming_uniform(rng, (ci, ci, 1, 1), ci), f"{prefix}pw1"),
            Parameter(kaiming_uniform(rng, (ci, 1, k, k), k * k), f"{prefix}dw2"),
            Parameter(kaiming_uniform(rng, (co, ci, 1, 1), ci), f"{prefix}pw2"),
        ]
    if kind.startswith("dil_conv"):
        return [
            Parameter(kaiming_uniform(rng, (ci, 1, k, k), k * k), f"{prefix}dw"),
            Parameter(kaiming_uniform(rng, (co, ci, 1, 1), ci), f"{prefix}pw"),
        ]
    if kind == "linear":
        return [
            Parameter(kaiming_uniform(rng, (co, ci), ci), f"{prefix}w"),
            Parameter(np.zeros(co, dtype=default_dtype()), f"{prefix}b"),
        ]
    return []


def init_norms(desc: OperationDescriptor, prefix: str = "") -> list[NormState]:
    if not desc.norm:
        return []
    if desc.kind.startswith("sep_conv"):
        return [NormState(desc.c_in, affine=desc.affine, name=f"{prefix}bn1"),
                NormState(desc.c_out, affine=desc.affine, name=f"{prefix}bn2")]
    if desc.kind in ("conv1x1", "conv3x3") or desc.kind.startswith("dil_conv"):
        return [NormState(desc.c_out, affine=desc.affine, name=f"{prefix}bn")]
    return []


def _param_count(kind: str) -> int:
    if kind in ("conv1x1", "conv3x3"):
        return 1
    if kind.startswith("sep_conv"):
        return 4
    if kind.startswith("dil_conv") or kind == "linear":
        return 2
    return 0


def _norm(x, norms, i, training):
    return norms[i](x, training) if norms else x


def _check_channels(desc, x):
    if x.ndim != 4:
        raise DimensionError(f"{desc.kind} expects a rank-4 input, got shape {x.shape}")
    if x.shape[1] != desc.c_in:
        raise DimensionError(f"{desc.kind} expects {desc.c_in} input channels, got {x.shape[1]}")


def apply_op(desc: OperationDescriptor, x, params: Sequence[Parameter] = (),
             norms: Sequence[NormState] = (), training: bool = True) -> Tensor:
    """Run one operation of kind ``desc.kind`` on ``x``."""
    kind = desc.kind
    expected = _param_count(desc.kind)
    if len(params) != expected:
        raise DimensionError(f"{kind} expects {expected} parameter tensors, got {len(params)}")
    if kind == "elementwise_add":
        return F.add_n(list(x))
    if kind == "linear":
        if x.ndim != 2 or x.shape[1] != desc.c_in:
            raise DimensionError(f"linear expects (N, {desc.c_in}) input, got shape {x.shape}")
        return F.linear(x, params[0].value, params[1].value)
    if kind == "global_avg_pool":
        return F.global_avg_pool(x)

    _check_channels(desc, x)
    s, p = desc.stride, desc.padding
    if kind == "zero":
        n, _, h, w = x.shape
        ho, wo = (h - 1) // s + 1, (w - 1) // s + 1
        return Tensor(np.zeros((n, desc.c_out, ho, wo), dtype=x.dtype))
    if kind == "skip":
        return x
    if kind == "avg_pool3x3":
        return F.avg_pool2d(x, 3, s, p)
    if kind == "max_pool3x3":
        return F.max_pool2d(x, 3, s, p)
    if kind in ("conv1x1", "conv3x3"):
        y = F.conv2d(F.relu(x), params[0].value, s, p)
        return _norm(y, norms, 0, training)
    if kind.startswith("dil_conv"):
        y = F.conv2d(F.relu(x), params[0].value, s, p, dilation=2, groups=desc.c_in)
        y = F.conv2d(y, params[1].value)
        return _norm(y, norms, 0, training)
    if kind.startswith("sep_conv"):
        y = F.conv2d(F.relu(x), params[0].value, s, p, groups=desc.c_in)
        y = _norm(F.conv2d(y, params[1].value), norms, 0, training)
        y = F.conv2d(F.relu(y), params[2].value, 1, p, groups=desc.c_in)
        return _norm(F.conv2d(y, params[3].value), norms, 1, training)
    raise ConfigError(f"unknown operation kind {kind!r}", "kind")


class OpBlock:
    """An operation descriptor bound to its parameters and norm state."""

    def __init__(self, desc: OperationDescriptor, rng: Optional[np.random.Generator] = None,
                 prefix: str = ""):
        self.desc = desc
        self.params = init_params(desc, rng if rng is not None else np.random.default_rng(0), prefix)
        self.norms = init_norms(desc, prefix)

    def __call__(self, x, training: bool = True) -> Tensor:
        return apply_op(self.desc, x, self.params, self.norms, training)

    def all_params(self) -> list[Parameter]:
        out = list(self.params)
        for n in self.norms:
            out += n.params()
        return out

    def copy(self) -> "OpBlock":
        new = OpBlock.__new__(OpBlock)
        new.desc = replace(self.desc)
        new.params = [_copy_param(p) for p in self.params]
        new.norms = [n.copy() for n in self.norms]
        return new
