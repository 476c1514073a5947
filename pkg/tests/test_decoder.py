import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fanet import tensor as T
from fanet.decoder import FusionDecoder, bce_loss, decode
from fanet.dem_rfb import FusedFeatures
from fanet.errors import ShapeError, ValidationError


def test_zero_weights_give_half_probability():
    dec = FusionDecoder(np.random.default_rng(0), 4)
    for _, p in dec.named_parameters():
        p.data[:] = 0
    high = T.Tensor(np.random.default_rng(1).standard_normal((2, 4, 2, 2)).astype(np.float32))
    low = T.Tensor(np.random.default_rng(2).standard_normal((2, 4, 8, 8)).astype(np.float32))
    seg = decode(high, low, dec, (32, 32))
    assert seg.logits.shape == seg.probabilities.shape == (2, 1, 32, 32)
    npt.assert_array_equal(seg.logits.data, 0)
    npt.assert_array_equal(seg.probabilities.data, 0.5)
    dec.classifier.bias.data[:] = 1.5
    npt.assert_allclose(decode(high, low, dec, (32, 32)).logits.data, 1.5)


def test_decode_accepts_fused_features_and_matches_oracle():
    rng = np.random.default_rng(3)
    dec = FusionDecoder(rng, 3).astype(np.float64)
    high = rng.standard_normal((1, 3, 2, 2))
    d1 = rng.standard_normal((1, 3, 4, 4))
    fused = FusedFeatures(T.Tensor(d1), None, None)
    seg = decode(T.Tensor(high), fused, dec, (16, 16))
    x = np.concatenate([oracles.bilinear(high, 4, 4), d1], axis=1)
    x = oracles.relu(oracles.conv_module(x, dec.refine1))
    x = oracles.relu(oracles.conv_module(x, dec.refine2))
    logits = oracles.bilinear(oracles.conv_module(x, dec.classifier), 16, 16)
    npt.assert_allclose(seg.logits.data, logits, atol=1e-10)
    npt.assert_allclose(seg.probabilities.data, 1 / (1 + np.exp(-logits)), atol=1e-12)


def test_stream_mismatch_is_shape_error():
    dec = FusionDecoder(np.random.default_rng(0), 2)
    with pytest.raises(ShapeError):
        decode(T.Tensor(np.zeros((1, 2, 3, 3))), T.Tensor(np.zeros((1, 2, 8, 8))), dec, (32, 32))
    with pytest.raises(ShapeError):
        decode(T.Tensor(np.zeros((2, 2, 2, 2))), T.Tensor(np.zeros((1, 2, 8, 8))), dec, (32, 32))


def test_bce_half_probability_is_ln2():
    t = (np.random.default_rng(4).random((2, 1, 5, 5)) < 0.5).astype(np.float32)
    loss = bce_loss(T.Tensor(np.zeros((2, 1, 5, 5), np.float32)), t)
    assert abs(loss.item() - math.log(2)) < 1e-6


def test_bce_exact_prediction_is_near_zero():
    t = (np.random.default_rng(5).random((1, 1, 4, 4)) < 0.5).astype(np.float64)
    logits = np.where(t == 1, 40.0, -40.0)
    assert bce_loss(T.Tensor(logits), t).item() <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_bce_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, 1, 4, 4)) * 3
    t = (rng.random(z.shape) < 0.5).astype(np.float64)
    p = 1 / (1 + np.exp(-z))
    assert abs(bce_loss(T.Tensor(z), t).item() - oracles.bce(p, t)) < 1e-6


def test_bce_gradient_closed_form():
    rng = np.random.default_rng(6)
    z = T.Tensor(rng.standard_normal((2, 1, 3, 3)) * 2, requires_grad=True)
    t = (rng.random(z.shape) < 0.5).astype(np.float64)
    T.backward(bce_loss(z, t))
    p = 1 / (1 + np.exp(-z.data))
    npt.assert_allclose(z.grad, (p - t) / t.size, atol=1e-12)


def test_bce_rejects_non_binary_target():
    with pytest.raises(ValidationError):
        bce_loss(T.Tensor(np.zeros((1, 1, 2, 2))), np.full((1, 1, 2, 2), 0.5))


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e4, 1e4), st.sampled_from([0.0, 1.0]))
def test_bce_finite_everywhere(z, t):
    loss = bce_loss(T.Tensor(np.full((1, 1, 1, 1), z)), np.full((1, 1, 1, 1), t))
    assert math.isfinite(loss.item()) and loss.item() >= 0
    assert loss.item() <= -math.log(1e-7) + 1e-6
