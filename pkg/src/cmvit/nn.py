"""Neural network layers built on :mod:`cmvit.tensor`.

Initialization: weights ~ U(-b, b) with b = sqrt(6 / fan_in), biases zero,
normalization scales one and shifts zero, positional tables zero.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ShapeError
from .tensor import Parameter, Tensor, bmm, concat, relu, reshape, transpose


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Parameter:
    bound = math.sqrt(6.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape))


def _zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape))


class Module:
    """Container that discovers parameters, buffers and submodules by attribute."""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator[Module]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _uniform(rng, (out_features, in_features), in_features)
        self.bias = _zeros((out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last extent {self.in_features}, got {list(x.shape)}")
        lead = x.shape[:-1]
        y = reshape(x, (-1, self.in_features)) @ transpose(self.weight)
        if self.bias is not None:
            y = y + self.bias
        return reshape(y, (*lead, self.out_features))


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        rng=None,
    ):
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"channels {in_channels}->{out_channels} not divisible by groups {groups}")
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = in_channels // groups * kernel_size * kernel_size
        self.weight = _uniform(rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in)
        self.bias = _zeros((out_channels,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2d expects [N,{self.in_channels},H,W], got {list(x.shape)}")
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class DepthwiseSeparableConv(Module):
    """Per-channel spatial convolution followed by a 1x1 channel mixer."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, padding: int = 1, rng=None):
        self.depthwise = Conv2d(in_channels, in_channels, kernel_size, padding=padding, groups=in_channels, rng=rng)
        self.pointwise = Conv2d(in_channels, out_channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


class LayerNorm(Module):
    def __init__(self, num_features: int, eps: float = 1e-5):
        self.num_features = num_features
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features))
        self.beta = _zeros((num_features,))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.num_features:
            raise ShapeError(f"LayerNorm over {self.num_features} features got {list(x.shape)}")
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class ChannelLayerNorm(LayerNorm):
    """LayerNorm across the channel axis of an [N,C,H,W] map, per spatial site."""

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.num_features:
            raise ShapeError(f"ChannelLayerNorm over {self.num_features} channels got {list(x.shape)}")
        y = F.layer_norm(transpose(x, (0, 2, 3, 1)), self.gamma, self.beta, self.eps)
        return transpose(y, (0, 3, 1, 2))


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(num_features))
        self.beta = _zeros((num_features,))
        self.running_mean = np.zeros(num_features, dtype=self.gamma.dtype)
        self.running_var = np.ones(num_features, dtype=self.gamma.dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class MultiHeadAttention(Module):
    def __init__(self, embed_dim: int, num_heads: int, rng=None):
        if embed_dim % num_heads:
            raise ShapeError(f"embed_dim {embed_dim} not divisible by {num_heads} heads")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.q_proj = Linear(embed_dim, embed_dim, rng=rng)
        self.k_proj = Linear(embed_dim, embed_dim, rng=rng)
        self.v_proj = Linear(embed_dim, embed_dim, rng=rng)
        self.out_proj = Linear(embed_dim, embed_dim, rng=rng)

    def _heads(self, t: Tensor, n: int, seq: int) -> Tensor:
        return transpose(reshape(t, (n, seq, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 3 or tokens.shape[-1] != self.embed_dim:
            raise ShapeError(f"attention expects [N,T,{self.embed_dim}], got {list(tokens.shape)}")
        n, seq, _ = tokens.shape
        q = self._heads(self.q_proj(tokens), n, seq)
        k = self._heads(self.k_proj(tokens), n, seq)
        v = self._heads(self.v_proj(tokens), n, seq)
        scores = bmm(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        context = bmm(F.softmax(scores, axis=-1), v)
        merged = reshape(transpose(context, (0, 2, 1, 3)), (n, seq, self.embed_dim))
        return self.out_proj(merged)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng=None):
        self.fc1 = Linear(dim, hidden, rng=rng)
        self.fc2 = Linear(hidden, dim, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class PatchEmbed(Module):
    """Non-overlapping PxP patches projected to ``embed_dim`` by a stride-P conv."""

    def __init__(self, in_channels: int, embed_dim: int, patch_size: int, rng=None):
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.proj = Conv2d(in_channels, embed_dim, patch_size, stride=patch_size, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        p = self.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible into {p}x{p} patches")
        grid = self.proj(x)
        tokens = reshape(grid, (n, self.embed_dim, (h // p) * (w // p)))
        return transpose(tokens, (0, 2, 1))


class PositionalEncoding(Module):
    """Learned [T, D] table added to every sequence in the batch."""

    def __init__(self, num_tokens: int, embed_dim: int):
        self.table = _zeros((num_tokens, embed_dim))

    def forward(self, tokens: Tensor) -> Tensor:
        return add_positional(tokens, self.table)


def add_positional(tokens: Tensor, table: Tensor) -> Tensor:
    n, t, d = tokens.shape
    if table.shape != (t, d):
        raise ShapeError(f"positional table {list(table.shape)} vs tokens {list(tokens.shape)}")
    return reshape(reshape(tokens, (n, t * d)) + reshape(table, (t * d,)), (n, t, d))


avg_pool = F.avg_pool
softmax = F.softmax
__all__ = [
    "Module", "Linear", "Conv2d", "DepthwiseSeparableConv", "LayerNorm", "ChannelLayerNorm",
    "BatchNorm", "MultiHeadAttention", "FeedForward", "PatchEmbed", "PositionalEncoding",
    "add_positional", "avg_pool", "softmax", "relu", "concat",
]
