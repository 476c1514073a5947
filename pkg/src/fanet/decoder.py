"""Fusion decoder and the binary cross-entropy loss."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .nn import Conv2d, ConvReLU, Module

BCE_EPS = 1e-7


@dataclass
class SegmentationMap:
    logits: T.Tensor
    probabilities: T.Tensor


class FusionDecoder(Module):
    def __init__(self, rng, width):
        self.refine1 = ConvReLU(rng, 2 * width, width, 3)
        self.refine2 = ConvReLU(rng, width, width, 3)
        self.classifier = Conv2d(rng, width, 1, 1)

    def forward(self, high, low, out_size):
        return decode(high, low, self, out_size)


def decode(high, low, weights, out_size):
    """Resize ``high`` to the finest fused level, concatenate, refine with two
    3x3 conv+relu layers, project to one logit channel and resize to
    ``out_size``.

    ``low`` is either a FusedFeatures or the finest fused map itself.
    """
    d1 = getattr(low, "d1", low)
    if high.shape[0] != d1.shape[0]:
        raise ShapeError(f"decoder: batch {high.shape[0]} vs {d1.shape[0]}", dimension="batch")
    hh, hw = high.shape[2:]
    lh, lw = d1.shape[2:]
    if lh % hh or lw % hw or lh // hh != lw // hw:
        raise ShapeError(f"decoder: high stream {hh}x{hw} does not divide low stream {lh}x{lw}",
                         dimension="spatial")
    up = T.bilinear_upsample(high, lh, lw)
    x = weights.refine2(weights.refine1(T.concat_channels([up, d1])))
    logits = T.bilinear_upsample(weights.classifier(x), *out_size)
    return SegmentationMap(logits, T.sigmoid(logits))


def check_binary(target):
    arr = target.data if isinstance(target, T.Tensor) else np.asarray(target)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValidationError("target mask must contain only 0 and 1")
    return arr


def bce_loss(pred, target, eps=BCE_EPS):
    """Mean per-pixel BCE between a SegmentationMap and a {0, 1} target.

    Computed from the logits with the probability clamped to [eps, 1 - eps].
    """
    arr = check_binary(target)
    logits = pred.logits if isinstance(pred, SegmentationMap) else pred
    return T.bce_with_logits(logits, arr.astype(logits.dtype, copy=False), eps)
