"""Miniature pyramid encoder with one spatial-reduction attention stage.

Level ``i`` (1-based) sits at stride ``2**(i+1)``: a stride-2 stem followed by
one stride-2 overlapping patch embedding per level.  The configured attention
level carries a pre-norm transformer block (spatial-reduction attention and a
1x1 MLP, both residual); the other levels carry a 3x3 conv refinement.
"""
import math
from dataclasses import dataclass, field

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Conv2d, ConvReLU, LayerNorm2d, Module

FULL_CHANNELS = (64, 128, 320, 512)
DESK_CHANNELS = (16, 32, 48, 64)


@dataclass
class EncoderConfig:
    channels: tuple = DESK_CHANNELS
    attention_stage_level: int = 3
    sr_ratio: int = 2
    num_heads: int = 2
    mlp_ratio: int = 2
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self):
        if len(self.channels) != 4:
            raise ConfigError(f"need 4 channel widths, got {self.channels}", "encoder.channels")
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel widths must be positive", "encoder.channels")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"channel widths must strictly increase: {self.channels}",
                              "encoder.channels")
        if self.attention_stage_level not in (1, 2, 3, 4):
            raise ConfigError("must be in 1..4", "encoder.attention_stage_level")
        if self.sr_ratio < 1:
            raise ConfigError("must be >= 1", "encoder.sr_ratio")
        if self.num_heads < 1:
            raise ConfigError("must be >= 1", "encoder.num_heads")
        width = self.channels[self.attention_stage_level - 1]
        if width % self.num_heads:
            raise ConfigError(f"attention width {width} not divisible by {self.num_heads} heads",
                              "encoder.num_heads")

    @classmethod
    def full_size(cls):
        return cls(channels=FULL_CHANNELS, num_heads=5, sr_ratio=2)


@dataclass
class PyramidFeatures:
    x1: T.Tensor
    x2: T.Tensor
    x3: T.Tensor
    x4: T.Tensor
    attention: list = field(default_factory=list)

    def levels(self):
        return (self.x1, self.x2, self.x3, self.x4)

    def check(self, height, width, channels):
        for i, x in enumerate(self.levels(), start=1):
            expected = (channels[i - 1], height >> (i + 1), width >> (i + 1))
            if x.shape[1:] != expected:
                raise ShapeError(f"level {i}: got {x.shape[1:]}, expected {expected}",
                                 dimension=f"x{i}")


class SpatialReductionAttention(Module):
    def __init__(self, rng, channels, num_heads, sr_ratio, ln_eps=1e-5):
        if channels % num_heads:
            raise ConfigError(f"{channels} channels not divisible by {num_heads} heads", "num_heads")
        self.num_heads = num_heads
        self.sr_ratio = sr_ratio
        self.query = Conv2d(rng, channels, channels, 1)
        self.key = Conv2d(rng, channels, channels, 1)
        self.value = Conv2d(rng, channels, channels, 1)
        self.proj = Conv2d(rng, channels, channels, 1)
        if sr_ratio > 1:
            self.reduce = Conv2d(rng, channels, channels, sr_ratio, stride=sr_ratio, padding=0)
            self.reduce_norm = LayerNorm2d(channels, ln_eps)
        self.last_attention = None

    def forward(self, x):
        return spatial_reduction_attention(x, self.sr_ratio, self.num_heads, self)


def spatial_reduction_attention(x, sr_ratio, num_heads, weights):
    """Multi-head attention with full-resolution queries and keys/values taken
    from an ``sr_ratio``-strided reduction of ``x``.  Output shape equals input.

    The per-head attention maps (B, heads, N, N_kv) are left on
    ``weights.last_attention``.
    """
    B, C, H, W = x.shape
    if H % sr_ratio or W % sr_ratio:
        raise ShapeError(f"spatial size {H}x{W} not divisible by sr_ratio {sr_ratio}",
                         dimension="spatial")
    d = C // num_heads
    n = H * W
    reduced = x
    if sr_ratio > 1:
        reduced = weights.reduce_norm(weights.reduce(x))
    m = reduced.shape[2] * reduced.shape[3]

    q = T.permute(T.reshape(weights.query(x), (B, num_heads, d, n)), (0, 1, 3, 2))
    k = T.reshape(weights.key(reduced), (B, num_heads, d, m))
    v = T.permute(T.reshape(weights.value(reduced), (B, num_heads, d, m)), (0, 1, 3, 2))

    attn = T.softmax(T.scale(T.matmul(q, k), 1.0 / math.sqrt(d)), axis=-1)
    weights.last_attention = attn
    out = T.matmul(attn, v)                                   # (B, h, N, d)
    out = T.reshape(T.permute(out, (0, 1, 3, 2)), (B, C, H, W))
    return weights.proj(out)


class TransformerBlock(Module):
    def __init__(self, rng, channels, num_heads, sr_ratio, mlp_ratio=2, ln_eps=1e-5):
        self.norm1 = LayerNorm2d(channels, ln_eps)
        self.attn = SpatialReductionAttention(rng, channels, num_heads, sr_ratio, ln_eps)
        self.norm2 = LayerNorm2d(channels, ln_eps)
        self.fc1 = ConvReLU(rng, channels, channels * mlp_ratio, 1)
        self.fc2 = Conv2d(rng, channels * mlp_ratio, channels, 1)

    def forward(self, x):
        x = T.add(x, self.attn(self.norm1(x)))
        return T.add(x, self.fc2(self.fc1(self.norm2(x))))


class ConvStage(Module):
    def __init__(self, rng, in_ch, out_ch):
        self.embed = ConvReLU(rng, in_ch, out_ch, 3, stride=2)
        self.refine = ConvReLU(rng, out_ch, out_ch, 3)

    def forward(self, x):
        return self.refine(self.embed(x))


class AttentionStage(Module):
    def __init__(self, rng, in_ch, out_ch, cfg):
        self.embed = Conv2d(rng, in_ch, out_ch, 3, stride=2)
        self.embed_norm = LayerNorm2d(out_ch, cfg.ln_eps)
        self.block = TransformerBlock(rng, out_ch, cfg.num_heads, cfg.sr_ratio,
                                      cfg.mlp_ratio, cfg.ln_eps)

    def forward(self, x):
        return self.block(self.embed_norm(self.embed(x)))


class PyramidEncoder(Module):
    def __init__(self, rng, config=None, in_channels=3):
        self.config = config or EncoderConfig()
        ch = self.config.channels
        self.stem = ConvReLU(rng, in_channels, ch[0], 3, stride=2)
        prev = ch[0]
        for level, width in enumerate(ch, start=1):
            if level == self.config.attention_stage_level:
                stage = AttentionStage(rng, prev, width, self.config)
            else:
                stage = ConvStage(rng, prev, width)
            setattr(self, f"stage{level}", stage)
            prev = width

    def attention_blocks(self):
        return [getattr(self, f"stage{self.config.attention_stage_level}").block.attn]

    def forward(self, image):
        return encode(image, self)


def encode(image, encoder):
    """Image (B, 3, H, W) -> PyramidFeatures at strides 4, 8, 16, 32."""
    if image.ndim != 4:
        raise ShapeError(f"image must be (B, 3, H, W), got {image.shape}", dimension="rank")
    H, W = image.shape[2:]
    if H % 32 or W % 32 or H == 0 or W == 0:
        raise ConfigError(f"input size {H}x{W} must be a positive multiple of 32",
                          "input size")
    x = encoder.stem(image)
    feats = []
    for level in range(1, 5):
        x = getattr(encoder, f"stage{level}")(x)
        feats.append(x)
    attn = [blk.last_attention for blk in encoder.attention_blocks()]
    return PyramidFeatures(*feats, attention=attn)

