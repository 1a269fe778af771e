"""The three detector architectures and their configuration.

``cmvit``      patch embedding + positional table, then ``num_blocks`` x
               (frequency-fusion block -> transformer block), average-pooled
               and classified by a two-layer head.
``cmvit_lbp``  the same backbone, with an embedded LBP histogram of the
               grayscale input concatenated to the pooled features before the head.
``xception``   entry convs, residual middle blocks of depthwise-separable
               convs with batch norm, an exit separable conv, global pooling.

Every model's ``logits`` feeds the loss; calling the model returns softmax
probabilities.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .lbp import LBPConfig, lbp_histogram, lbp_map
from .nn import (
    BatchNorm,
    ChannelLayerNorm,
    Conv2d,
    DepthwiseSeparableConv,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    PatchEmbed,
    PositionalEncoding,
)
from .spectral import fft2_magnitude
from .tensor import Tensor, concat, pad2d, relu, reshape, transpose

ARCHS = ("cmvit", "cmvit_lbp", "xception")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "cmvit"
    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 2
    num_blocks: int = 2
    mlp_ratio: int = 2
    cmf_channels: int = 16
    cmf_conv_layers: int = 2
    lbp_radius: int = 1
    lbp_neighbors: int = 8
    lbp_embed_dim: int = 16
    xception_middle_blocks: int = 2
    xception_width: int = 16
    num_classes: int = 2

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for f in dataclasses.fields(self):
            if f.name != "arch":
                value = getattr(self, f.name)
                if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
                    raise ConfigError(f"{f.name} must be a non-negative integer, got {value!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.arch == "xception":
            if self.xception_width < 2 or self.xception_width % 2:
                raise ConfigError("xception_width must be an even integer >= 2")
            if self.image_size < 2 or self.image_size % 2:
                raise ConfigError("xception needs an even image_size")
        else:
            if self.patch_size < 1 or self.image_size % self.patch_size:
                raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
            if self.num_heads < 1 or self.embed_dim % self.num_heads:
                raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
            if self.cmf_conv_layers < 1 or self.cmf_channels < 1 or self.mlp_ratio < 1:
                raise ConfigError("cmf_conv_layers, cmf_channels and mlp_ratio must be >= 1")
        LBPConfig(self.lbp_radius, self.lbp_neighbors)

    @property
    def lbp(self) -> LBPConfig:
        return LBPConfig(self.lbp_radius, self.lbp_neighbors)

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


def micro_config(arch: str, **overrides) -> ModelConfig:
    """Small pinned configurations used for verification and desk-scale training."""
    base = dict(arch=arch, image_size=32, patch_size=8, embed_dim=32, num_heads=2, num_blocks=2)
    base.update(overrides)
    return ModelConfig(**base)


def gradcheck_config(arch: str) -> ModelConfig:
    """Tiny configuration for end-to-end finite-difference checks."""
    return ModelConfig(
        arch=arch, image_size=16, patch_size=8, embed_dim=16, num_heads=2, num_blocks=1,
        mlp_ratio=2, cmf_channels=4, cmf_conv_layers=2, lbp_embed_dim=4,
        xception_middle_blocks=1, xception_width=4,
    )


def paper_scale_config(arch: str) -> ModelConfig:
    """Configurations in the parameter-count range of the published models (not asserted)."""
    if arch == "xception":
        return ModelConfig(arch=arch, image_size=256, xception_middle_blocks=8, xception_width=1480)
    return ModelConfig(
        arch=arch, image_size=224, patch_size=16, embed_dim=768, num_heads=12,
        num_blocks=8 if arch == "cmvit" else 14, mlp_ratio=4, cmf_channels=64, cmf_conv_layers=2,
        lbp_embed_dim=256,
    )


class CMFBlock(Module):
    """Frequency fusion: |FFT| of the normalized map, conv stack, concat, 1x1 projection, residual."""

    def __init__(self, channels: int, cmf_channels: int, conv_layers: int, rng=None):
        self.norm = ChannelLayerNorm(channels)
        widths = [channels] + [cmf_channels] * conv_layers
        self.convs = [Conv2d(widths[i], widths[i + 1], 3, padding=1, rng=rng) for i in range(conv_layers)]
        self.proj = Conv2d(channels + cmf_channels, channels, 1, rng=rng)

    def frequency_features(self, h: Tensor) -> Tensor:
        f = fft2_magnitude(h)
        for i, conv in enumerate(self.convs):
            f = conv(f)
            if i < len(self.convs) - 1:
                f = relu(f)
        return f

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        fused = concat([h, self.frequency_features(h)], axis=1)
        return x + self.proj(fused)


class MViTBlock(Module):
    """Pre-norm transformer block: t + attn(ln(t)), then + ffn(ln(.))."""

    def __init__(self, embed_dim: int, num_heads: int, mlp_ratio: int, rng=None):
        self.norm1 = LayerNorm(embed_dim)
        self.attn = MultiHeadAttention(embed_dim, num_heads, rng=rng)
        self.norm2 = LayerNorm(embed_dim)
        self.ffn = FeedForward(embed_dim, embed_dim * mlp_ratio, rng=rng)

    def forward(self, tokens: Tensor) -> Tensor:
        t = tokens + self.attn(self.norm1(tokens))
        return t + self.ffn(self.norm2(t))


class CombinedBlock(Module):
    """CMF on the token grid, then the transformer block on the token sequence."""

    def __init__(self, cfg: ModelConfig, rng=None):
        self.grid = cfg.grid_size
        self.cmf = CMFBlock(cfg.embed_dim, cfg.cmf_channels, cfg.cmf_conv_layers, rng=rng)
        self.mvit = MViTBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, rng=rng)

    def forward(self, tokens: Tensor) -> Tensor:
        n, t, d = tokens.shape
        grid = reshape(transpose(tokens, (0, 2, 1)), (n, d, self.grid, self.grid))
        grid = self.cmf(grid)
        tokens = transpose(reshape(grid, (n, d, t)), (0, 2, 1))
        return self.mvit(tokens)


class Classifier(Module):
    """Base: subclasses provide ``logits``; calling returns class probabilities."""

    cfg: ModelConfig

    def _check_input(self, x: Tensor) -> None:
        s = self.cfg.image_size
        if x.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ShapeError(f"expected images [N,3,{s},{s}], got {list(x.shape)}")

    def logits(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        return F.softmax(self.logits(x), axis=-1)


class CMViT(Classifier):
    def __init__(self, cfg: ModelConfig, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = PatchEmbed(3, d, cfg.patch_size, rng=rng)
        self.pos = PositionalEncoding(cfg.grid_size ** 2, d)
        self.blocks = [CombinedBlock(cfg, rng=rng) for _ in range(cfg.num_blocks)]
        self.head_fc1 = Linear(self._head_in(), d, rng=rng)
        self.head_fc2 = Linear(d, cfg.num_classes, rng=rng)

    def _head_in(self) -> int:
        return self.cfg.embed_dim

    def features(self, x: Tensor) -> Tensor:
        """Pooled backbone vector [N, embed_dim]."""
        self._check_input(x)
        tokens = self.pos(self.patch_embed(x))
        for block in self.blocks:
            tokens = block(tokens)
        n, t, d = tokens.shape
        g = self.cfg.grid_size
        grid = reshape(transpose(tokens, (0, 2, 1)), (n, d, g, g))
        return reshape(F.avg_pool(grid, (1, 1)), (n, d))

    def head(self, v: Tensor) -> Tensor:
        return self.head_fc2(relu(self.head_fc1(v)))

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))


def images_to_gray(x: Tensor) -> np.ndarray:
    """Recover 8-bit luminance [N,H,W] from normalized [N,3,H,W] images."""
    rgb = np.clip(np.floor(x.data.astype(np.float64) * 255.0 + 0.5), 0, 255)
    lum = 0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]
    return np.clip(np.floor(lum + 0.5), 0, 255).astype(np.uint8)


class CMViTLBP(CMViT):
    def __init__(self, cfg: ModelConfig, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        super().__init__(cfg, rng=rng)
        self.lbp_embed = Linear(256, cfg.lbp_embed_dim, rng=rng)

    def _head_in(self) -> int:
        return self.cfg.embed_dim + self.cfg.lbp_embed_dim

    def lbp_features(self, x: Tensor) -> Tensor:
        """Normalized LBP histograms [N, 256]; constant w.r.t. the input."""
        hist = lbp_histogram(lbp_map(images_to_gray(x), self.cfg.lbp), normalize=True)
        return Tensor(hist, dtype=x.dtype)

    def lbp_branch(self, x: Tensor) -> Tensor:
        return self.lbp_embed(self.lbp_features(x))

    def logits(self, x: Tensor) -> Tensor:
        fused = concat([self.features(x), self.lbp_branch(x)], axis=1)
        return self.head(fused)


class ConvBNReLU(Module):
    def __init__(self, conv: Module, channels: int):
        self.conv = conv
        self.bn = BatchNorm(channels)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.bn(self.conv(x)))


class XceptionMiddleBlock(Module):
    """x + three (separable conv, batch norm, ReLU) stages."""

    def __init__(self, width: int, rng=None):
        self.stages = [ConvBNReLU(DepthwiseSeparableConv(width, width, rng=rng), width) for _ in range(3)]

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for stage in self.stages:
            h = stage(h)
        return x + h


class Xception(Classifier):
    def __init__(self, cfg: ModelConfig, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        w = cfg.xception_width
        self.entry1 = ConvBNReLU(Conv2d(3, w // 2, 3, stride=2, rng=rng), w // 2)
        self.entry2 = ConvBNReLU(Conv2d(w // 2, w, 3, padding=1, rng=rng), w)
        self.middle = [XceptionMiddleBlock(w, rng=rng) for _ in range(cfg.xception_middle_blocks)]
        self.exit = ConvBNReLU(DepthwiseSeparableConv(w, 2 * w, rng=rng), 2 * w)
        self.fc = Linear(2 * w, cfg.num_classes, rng=rng)

    def features(self, x: Tensor) -> Tensor:
        self._check_input(x)
        # TF-style "same" padding for the stride-2 3x3 entry conv on even extents
        h = self.entry1(pad2d(x, 0, 1, 0, 1))
        h = self.entry2(h)
        for block in self.middle:
            h = block(h)
        h = self.exit(h)
        n, c = h.shape[:2]
        return reshape(F.avg_pool(h, (1, 1)), (n, c))

    def logits(self, x: Tensor) -> Tensor:
        return self.fc(self.features(x))


def build_model(cfg: ModelConfig, seed: int = 0) -> Classifier:
    rng = np.random.default_rng(seed)
    if cfg.arch == "cmvit":
        return CMViT(cfg, rng=rng)
    if cfg.arch == "cmvit_lbp":
        return CMViTLBP(cfg, rng=rng)
    return Xception(cfg, rng=rng)


def count_parameters(model: Module) -> int:
    return sum(p.size for p in model.parameters())


def count_buffers(model: Module) -> int:
    return sum(b.size for _, b in model.named_buffers())
