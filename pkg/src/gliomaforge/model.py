"""Hierarchical 3D transformer for 4-class glioma segmentation.

Input N x 4 x D x H x W (spatial dims divisible by 32) flows through a
dual-path convolutional stem (low-pass / high-pass split), four encoder
stages of spatial-reduction attention + depthwise Mix-FFN blocks at
resolutions 1/4 .. 1/32, a combined spatial + channel attention gate on
the deepest features, and a transpose-conv decoder that fuses the skip
pyramid back to full-resolution class logits.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    channel_avg,
    channel_max,
    concat,
    conv3d,
    global_avg_pool,
    layer_norm,
    load_checkpoint,
    save_checkpoint,
    softmax,
    transpose_conv3d,
)
from .errors import CheckpointError, ConfigError, ShapeError


@dataclass
class ModelConfig:
    in_channels: int = 4
    num_classes: int = 4
    stage_channels: list[int] = field(default_factory=lambda: [48, 96, 192, 384])
    stage_heads: list[int] = field(default_factory=lambda: [4, 4, 6, 8])
    stage_strides: list[int] = field(default_factory=lambda: [4, 2, 2, 2])
    stage_depths: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    sr_ratios: list[int] = field(default_factory=lambda: [8, 4, 2, 1])
    decoder_channels: int = 48
    spatial_attn_kernel: int = 7
    channel_attn_reduction: int = 8
    ffn_expansion: int = 4

    def __post_init__(self):
        lists = (
            self.stage_channels,
            self.stage_heads,
            self.stage_strides,
            self.stage_depths,
            self.sr_ratios,
        )
        if any(len(item) != 4 for item in lists):
            raise ConfigError("stage lists must all have length 4")
        for c, h in zip(self.stage_channels, self.stage_heads):
            if c % h:
                raise ConfigError(f"channels {c} not divisible by heads {h}")
        if int(np.prod(self.stage_strides)) != 32:
            raise ConfigError(f"stage strides {self.stage_strides} must multiply to 32")
        if self.stage_channels[-1] % self.channel_attn_reduction:
            raise ConfigError("stage-4 channels must be divisible by the channel reduction")
        positive = (
            self.in_channels,
            self.num_classes,
            self.decoder_channels,
            self.ffn_expansion,
            *self.stage_depths,
        )
        if any(v < 1 for v in positive):
            raise ConfigError("config values must be positive")
        if self.spatial_attn_kernel % 2 == 0:
            raise ConfigError("spatial attention kernel must be odd")


class _Store:
    """Creates named parameters with seeded initialization."""

    def __init__(self, seed, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.params: dict[str, Parameter] = {}

    def _add(self, name, array):
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name}")
        p = Parameter(array.astype(self.dtype), name=name)
        self.params[name] = p
        return p

    def kaiming(self, name, shape, fan_in):
        std = math.sqrt(2.0 / fan_in)
        return self._add(name, self.rng.normal(0.0, std, size=shape))

    def constant(self, name, shape, value):
        return self._add(name, np.full(shape, value, dtype=np.float64))


def _to_tokens(x):
    n, c = x.shape[:2]
    return x.permute(0, 2, 3, 4, 1).reshape(n, -1, c)


def _to_grid(tokens, grid):
    n, _, c = tokens.shape
    return tokens.reshape(n, *grid, c).permute(0, 4, 1, 2, 3)


class _Conv:
    def __init__(self, store, name, cin, cout, k, stride=1, padding=0, groups=1):
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = (cin // groups) * k**3
        self.weight = store.kaiming(f"{name}.weight", (cout, cin // groups, k, k, k), fan_in)
        self.bias = store.constant(f"{name}.bias", (cout,), 0.0)

    def __call__(self, x):
        return conv3d(
            x, self.weight, bias=self.bias, stride=self.stride, padding=self.padding,
            groups=self.groups,
        )


class _TConv:
    def __init__(self, store, name, cin, cout, k, stride):
        self.stride = stride
        self.weight = store.kaiming(f"{name}.weight", (cin, cout, k, k, k), cin * k**3)
        self.bias = store.constant(f"{name}.bias", (cout,), 0.0)

    def __call__(self, x):
        return transpose_conv3d(x, self.weight, bias=self.bias, stride=self.stride)


class _Linear:
    def __init__(self, store, name, cin, cout):
        self.weight = store.kaiming(f"{name}.weight", (cin, cout), cin)
        self.bias = store.constant(f"{name}.bias", (cout,), 0.0)

    def __call__(self, x):
        return x @ self.weight + self.bias


class _Norm:
    def __init__(self, store, name, dim):
        self.gamma = store.constant(f"{name}.gamma", (dim,), 1.0)
        self.beta = store.constant(f"{name}.beta", (dim,), 0.0)

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta)


class _Attention:
    """Multi-head self-attention with strided spatial reduction of K/V."""

    def __init__(self, store, name, channels, heads, sr_ratio):
        self.channels, self.heads, self.ratio = channels, heads, sr_ratio
        self.q = _Linear(store, f"{name}.q", channels, channels)
        self.k = _Linear(store, f"{name}.k", channels, channels)
        self.v = _Linear(store, f"{name}.v", channels, channels)
        self.proj = _Linear(store, f"{name}.proj", channels, channels)
        if sr_ratio > 1:
            self.sr = _Conv(store, f"{name}.sr", channels, channels, sr_ratio, stride=sr_ratio)
            self.srnorm = _Norm(store, f"{name}.srnorm", channels)
        else:
            self.sr = None

    def _reduced(self, tokens, grid):
        if self.sr is None:
            return tokens
        # clamp the reduction so the reduced grid stays >= 1^3; for small
        # grids this runs a sliced corner of the learned kernel
        r = min(self.ratio, *grid)
        x = _to_grid(tokens, grid)
        weight = self.sr.weight if r == self.ratio else self.sr.weight[:, :, :r, :r, :r]
        reduced = conv3d(x, weight, bias=self.sr.bias, stride=r)
        return self.srnorm(_to_tokens(reduced))

    def _split(self, t):
        n = t.shape[0]
        dk = self.channels // self.heads
        return t.reshape(n, t.shape[1], self.heads, dk).permute(0, 2, 1, 3)

    def attention_map(self, tokens, grid):
        """Per-head softmax weights (N, heads, L, L_reduced) plus the K/V tokens."""
        kv = self._reduced(tokens, grid)
        q = self._split(self.q(tokens))
        k = self._split(self.k(kv))
        scale = 1.0 / math.sqrt(self.channels // self.heads)
        return softmax((q @ k.permute(0, 1, 3, 2)) * scale, axis=-1), kv

    def __call__(self, tokens, grid):
        n, length, c = tokens.shape
        attn, kv = self.attention_map(tokens, grid)
        v = self._split(self.v(kv))
        out = (attn @ v).permute(0, 2, 1, 3).reshape(n, length, c)
        return self.proj(out)


class _MixFFN:
    """Pointwise expand, depthwise 3^3 conv on the grid, GELU, project back."""

    def __init__(self, store, name, channels, expansion):
        hidden = channels * expansion
        self.fc1 = _Linear(store, f"{name}.fc1", channels, hidden)
        self.dw = _Conv(store, f"{name}.dw", hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = _Linear(store, f"{name}.fc2", hidden, channels)

    def __call__(self, tokens, grid):
        x = _to_grid(self.fc1(tokens), grid)
        return self.fc2(_to_tokens(self.dw(x)).gelu())


class _Block:
    def __init__(self, store, name, channels, heads, sr_ratio, expansion):
        self.norm1 = _Norm(store, f"{name}.norm1", channels)
        self.attn = _Attention(store, f"{name}.attn", channels, heads, sr_ratio)
        self.norm2 = _Norm(store, f"{name}.norm2", channels)
        self.ffn = _MixFFN(store, f"{name}.ffn", channels, expansion)

    def __call__(self, tokens, grid):
        tokens = tokens + self.attn(self.norm1(tokens), grid)
        return tokens + self.ffn(self.norm2(tokens), grid)


class _Stage:
    """Overlapped patch merging followed by transformer blocks."""

    def __init__(self, store, name, cin, cfg, index):
        cout = cfg.stage_channels[index]
        stride = cfg.stage_strides[index]
        k, pad = (7, 3) if index == 0 else (3, 1)
        self.merge = _Conv(store, f"{name}.merge", cin, cout, k, stride=stride, padding=pad)
        self.blocks = [
            _Block(
                store,
                f"{name}.block{j}",
                cout,
                cfg.stage_heads[index],
                cfg.sr_ratios[index],
                cfg.ffn_expansion,
            )
            for j in range(cfg.stage_depths[index])
        ]
        self.norm = _Norm(store, f"{name}.norm", cout)

    def __call__(self, x):
        x = self.merge(x)
        grid = x.shape[2:]
        tokens = _to_tokens(x)
        for block in self.blocks:
            tokens = block(tokens, grid)
        return _to_grid(self.norm(tokens), grid)


class _DualAttention:
    """Spatial gate from pooled channels, channel gate from pooled space."""

    def __init__(self, store, name, channels, kernel, reduction):
        self.spatial = _Conv(store, f"{name}.spatial", 2, 1, kernel, padding=kernel // 2)
        self.fc1 = _Linear(store, f"{name}.fc1", channels, channels // reduction)
        self.fc2 = _Linear(store, f"{name}.fc2", channels // reduction, channels)

    def __call__(self, x):
        n, c = x.shape[:2]
        pooled = concat([channel_max(x), channel_avg(x)], axis=1)
        a_spatial = self.spatial(pooled).sigmoid()
        a_channel = self.fc2(self.fc1(global_avg_pool(x)).relu()).sigmoid()
        return x * a_spatial * a_channel.reshape(n, c, 1, 1, 1)


class _Decoder:
    """Upsample 1/32 features, fusing projected skips at 1/16, 1/8, 1/4."""

    def __init__(self, store, name, cfg):
        dc = cfg.decoder_channels
        chans = cfg.stage_channels
        self.proj4 = _Conv(store, f"{name}.proj4", chans[3], dc, 1)
        self.proj3 = _Conv(store, f"{name}.proj3", chans[2], dc, 1)
        self.proj2 = _Conv(store, f"{name}.proj2", chans[1], dc, 1)
        self.proj1 = _Conv(store, f"{name}.proj1", chans[0], dc, 1)
        self.up3 = _TConv(store, f"{name}.up3", dc, dc, 2, 2)
        self.up2 = _TConv(store, f"{name}.up2", dc, dc, 2, 2)
        self.up1 = _TConv(store, f"{name}.up1", dc, dc, 2, 2)
        self.upfinal = _TConv(store, f"{name}.upfinal", dc, dc, 4, 4)
        self.head = _Conv(store, f"{name}.head", dc, cfg.num_classes, 1)

    def __call__(self, pyramid, attended):
        x = self.up3(self.proj4(attended))
        x = (x + self.proj3(pyramid[2])).relu()
        x = self.up2(x)
        x = (x + self.proj2(pyramid[1])).relu()
        x = self.up1(x)
        x = (x + self.proj1(pyramid[0])).relu()
        return self.head(self.upfinal(x))


class GliomaForgeNet:
    """Full segmentation network; parameters created from a seeded RNG."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or ModelConfig()
        cfg = self.config
        store = _Store(seed, dtype)
        stem_c = cfg.in_channels
        self.stem_low = _Conv(store, "stem.low", stem_c, stem_c, 3, padding=1, groups=stem_c)
        # overwrite Kaiming draw: the low path starts as an exact box mean
        self.stem_low.weight.data = np.full_like(self.stem_low.weight.data, 1.0 / 27.0)
        self.stem_high = _Conv(store, "stem.high", stem_c, stem_c, 3, padding=1, groups=stem_c)
        self.stages = []
        cin = 2 * stem_c
        for i in range(4):
            self.stages.append(_Stage(store, f"stage{i + 1}", cin, cfg, i))
            cin = cfg.stage_channels[i]
        self.dual = _DualAttention(
            store, "dual", cfg.stage_channels[3], cfg.spatial_attn_kernel,
            cfg.channel_attn_reduction,
        )
        self.decoder = _Decoder(store, "decoder", cfg)
        self._params = store.params

    # -- parameters --------------------------------------------------------

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def save(self, path):
        save_checkpoint(path, {name: p.data for name, p in self._params.items()})

    def load(self, path):
        arrays = load_checkpoint(path)
        if set(arrays) != set(self._params):
            missing = sorted(set(self._params) - set(arrays))[:3]
            extra = sorted(set(arrays) - set(self._params))[:3]
            raise CheckpointError(f"parameter names differ (missing {missing}, extra {extra})")
        for name, p in self._params.items():
            if arrays[name].shape != p.shape:
                raise CheckpointError(
                    f"{name}: checkpoint shape {arrays[name].shape} != model {p.shape}"
                )
            p.data = arrays[name].astype(p.data.dtype)

    # -- forward -----------------------------------------------------------

    def frequency_stem(self, x):
        low = self.stem_low(x)
        high = self.stem_high(x) - low
        return concat([low, high], axis=1)

    def encode(self, x_stem):
        pyramid = []
        x = x_stem
        for stage in self.stages:
            x = stage(x)
            pyramid.append(x)
        return pyramid

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected N x {self.config.in_channels} x D x H x W input, got {x.shape}"
            )
        bad = [s for s in x.shape[2:] if s % 32]
        if bad:
            raise ShapeError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by 32; pad the input"
            )
        pyramid = self.encode(self.frequency_stem(x))
        attended = self.dual(pyramid[3])
        return self.decoder(pyramid, attended)

    __call__ = forward
