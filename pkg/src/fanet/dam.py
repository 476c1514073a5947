"""Dual Attention Module: position attention and channel attention, each a
zero-initialised residual, summed and fused by a 1x1 convolution."""
import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Conv2d, Module
from .tensor import Parameter

DEFAULT_MAX_POSITIONS = 4096


class DAM(Module):
    """Weights for both attention branches.

    ``fuse_conv`` starts at half the identity: with gamma = beta = 0 both
    branches return their input, so E + M = 2A and the module as a whole is
    the identity at initialisation.
    """

    def __init__(self, rng, channels, reduction=8, max_positions=DEFAULT_MAX_POSITIONS):
        qk = max(1, channels // reduction)
        self.max_positions = max_positions
        self.query_proj = Conv2d(rng, channels, qk, 1)
        self.key_proj = Conv2d(rng, channels, qk, 1)
        self.value_proj = Conv2d(rng, channels, channels, 1)
        self.gamma = Parameter(np.zeros(1, dtype=np.float32))
        self.beta = Parameter(np.zeros(1, dtype=np.float32))
        self.fuse_conv = Conv2d(rng, channels, channels, 1).set_identity(0.5)

    def forward(self, a):
        return dam_forward(a, self)


def position_attention(a, weights):
    """E_j = gamma * sum_i softmax_i(B_i . C_j) D_i + A_j.

    Returns ``(e, S)`` with S of shape (batch, N, N): row j is the
    distribution of query position j over key positions i.
    """
    B, C, H, W = a.shape
    n = H * W
    if n > weights.max_positions:
        raise ShapeError(f"position attention over {n} positions exceeds the cap of "
                         f"{weights.max_positions}", dimension="positions")
    queries = T.permute(T.reshape(weights.query_proj(a), (B, -1, n)), (0, 2, 1))  # (B, N, c)
    keys = T.reshape(weights.key_proj(a), (B, -1, n))                              # (B, c, N)
    values = T.permute(T.reshape(weights.value_proj(a), (B, C, n)), (0, 2, 1))   # (B, N, C)
    attn = T.softmax(T.matmul(queries, keys), axis=-1)
    attended = T.reshape(T.permute(T.matmul(attn, values), (0, 2, 1)), (B, C, H, W))
    return T.add(T.mul(weights.gamma, attended), a), attn


def channel_attention(a, weights):
    """M_j = beta * sum_i softmax_i(A_j . A_i) A_i + A_j, with channels
    compared as flattened spatial vectors.  Returns ``(m, X)``, X (batch, C, C).
    """
    B, C, H, W = a.shape
    flat = T.reshape(a, (B, C, H * W))
    attn = T.softmax(T.matmul(flat, T.permute(flat, (0, 2, 1))), axis=-1)
    attended = T.reshape(T.matmul(attn, flat), (B, C, H, W))
    return T.add(T.mul(weights.beta, attended), a), attn


def dam_forward(a, weights):
    e, _ = position_attention(a, weights)
    m, _ = channel_attention(a, weights)
    return weights.fuse_conv(T.add(e, m))
