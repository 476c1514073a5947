"""Feature Aggregation Module: channel gate followed by spatial gate."""
from . import tensor as T
from .nn import Conv2d, Module


class FAM(Module):
    """Holds the 7x7 (2 -> 1) spatial-gate convolution."""

    def __init__(self, rng, kernel=7):
        self.spatial_conv = Conv2d(rng, 2, 1, kernel)

    def forward(self, x):
        return fam_forward(x, self)


def channel_aggregate(f):
    """Gate each channel by sigmoid(spatial mean + spatial max).

    Returns ``(f_channel, gate)`` with gate of shape (B, C, 1, 1).
    """
    gate = T.sigmoid(T.add(T.global_avg_pool(f), T.global_max_pool(f)))
    return T.mul(f, gate), gate


def spatial_aggregate(f_channel, weights):
    """Gate each pixel by sigmoid(conv([channel mean, channel max])).

    Returns ``(f_spatial, gate)`` with gate of shape (B, 1, H, W).
    """
    pooled = T.concat_channels([T.channel_mean(f_channel), T.channel_max(f_channel)])
    gate = T.sigmoid(weights.spatial_conv(pooled))
    return T.mul(f_channel, gate), gate


def fam_forward(x, weights):
    f_channel, _ = channel_aggregate(x)
    f_spatial, _ = spatial_aggregate(f_channel, weights)
    return f_spatial
