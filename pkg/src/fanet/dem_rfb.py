"""Difference Elimination Module (coarse-to-fine multiplicative fusion) and
the five-branch Receptive Field Block."""
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Conv2d, ConvReLU, Module

DEFAULT_BRANCHES = ((3, 1), (3, 3), (3, 5), (3, 7))


@dataclass
class RFBConfig:
    """``branches`` lists (kernel, dilation) for branches 2-5; branch 1 is the
    1x1 shortcut."""

    branches: tuple = DEFAULT_BRANCHES
    inter_width: int = 0  # 0 -> half the block width

    def __post_init__(self):
        self.branches = tuple((int(k), int(d)) for k, d in self.branches)
        if len(self.branches) != 4:
            raise ConfigError(f"need 4 dilated branches (5 total), got {len(self.branches)}",
                              "rfb.branches")
        if any(k % 2 == 0 or k < 1 or d < 1 for k, d in self.branches):
            raise ConfigError("kernels must be odd and dilations >= 1", "rfb.branches")
        dil = [d for _, d in self.branches[1:]]
        if any(b <= a for a, b in zip(dil, dil[1:])):
            raise ConfigError(f"dilations of branches 3-5 must increase: {dil}", "rfb.branches")


@dataclass
class FusedFeatures:
    d1: T.Tensor
    d2: T.Tensor
    d3: T.Tensor


class DEM(Module):
    """Per-level 3x3 convolutions applied to the upsampled coarser map."""

    def __init__(self, rng, width):
        self.conv3 = Conv2d(rng, width, width, 3)
        self.conv2 = Conv2d(rng, width, width, 3)

    def forward(self, f1, f2, f3, refine=None):
        return dem_fuse(f1, f2, f3, self, refine)


def _up2(x, like):
    return T.bilinear_upsample(x, like.shape[2], like.shape[3])


def dem_fuse(f1, f2, f3, weights, refine=None):
    """D3 = f3;  D2 = f2 * conv(up(D3));  D1 = f1 * conv(up(D2)).

    ``refine`` optionally holds three callables applied to each fused level
    before it feeds the next finer one (the network passes its RFBs here).
    """
    for fine, coarse, name in ((f1, f2, "f2"), (f2, f3, "f3")):
        if coarse.shape[1] != fine.shape[1]:
            raise ShapeError(f"dem: {name} has {coarse.shape[1]} channels, expected "
                             f"{fine.shape[1]}", dimension="channels")
        if (coarse.shape[2] * 2, coarse.shape[3] * 2) != fine.shape[2:]:
            raise ShapeError(f"dem: {name} spatial {coarse.shape[2:]} is not half of "
                             f"{fine.shape[2:]}", dimension="spatial")
    r1, r2, r3 = refine if refine is not None else (None, None, None)

    d3 = r3(f3) if r3 else f3
    d2 = T.mul(f2, weights.conv3(_up2(d3, f2)))
    d2 = r2(d2) if r2 else d2
    d1 = T.mul(f1, weights.conv2(_up2(d2, f1)))
    d1 = r1(d1) if r1 else d1
    return FusedFeatures(d1, d2, d3)


class RFBBranch(Module):
    def __init__(self, rng, width, inter, kernel, dilation):
        self.reduce = ConvReLU(rng, width, inter, 1)
        self.conv = ConvReLU(rng, inter, inter, kernel)
        self.dilated = Conv2d(rng, inter, inter, 3, dilation=dilation)

    def forward(self, x):
        return self.dilated(self.conv(self.reduce(x)))


class RFB(Module):
    def __init__(self, rng, width, config=None):
        self.config = config or RFBConfig()
        self.width = width
        inter = self.config.inter_width or max(1, width // 2)
        self.shortcut = Conv2d(rng, width, width, 1)
        for i, (k, d) in enumerate(self.config.branches, start=2):
            setattr(self, f"branch{i}", RFBBranch(rng, width, inter, k, d))
        self.fuse = Conv2d(rng, 4 * inter, width, 1)

    def branches(self):
        return [getattr(self, f"branch{i}") for i in range(2, 6)]

    def forward(self, x):
        return rfb_forward(x, self.config, self)


def rfb_forward(x, config, weights):
    """relu(conv1x1(concat(branch2..branch5)) + branch1(x)); shape preserved."""
    if x.shape[1] != weights.width:
        raise ShapeError(f"rfb: input has {x.shape[1]} channels, block width is "
                         f"{weights.width}", dimension="channels")
    merged = T.concat_channels([b(x) for b in weights.branches()])
    return T.relu(T.add(weights.fuse(merged), weights.shortcut(x)))
