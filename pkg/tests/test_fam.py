import math

import numpy as np
import numpy.testing as npt
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from fanet import tensor as T
from fanet.fam import FAM, channel_aggregate, fam_forward, spatial_aggregate


def fam64(seed=0):
    return FAM(np.random.default_rng(seed)).astype(np.float64)


def test_zero_features_give_half_gate():
    f = T.Tensor(np.zeros((1, 3, 4, 4)))
    fc, gate = channel_aggregate(f)
    npt.assert_array_equal(gate.data, 0.5)
    npt.assert_array_equal(fc.data, 0)


def test_constant_channel_gate_is_sigmoid_2c():
    f = T.Tensor(np.ones((1, 2, 3, 3)))
    fc, gate = channel_aggregate(f)
    want = 1 / (1 + math.exp(-2))
    npt.assert_allclose(gate.data, want, rtol=1e-6)
    npt.assert_allclose(fc.data, 0.8808, atol=1e-4)


def test_channel_gate_matches_scan_oracle():
    x = np.random.default_rng(1).standard_normal((2, 5, 4, 3))
    fc, gate = channel_aggregate(T.Tensor(x))
    want_fc, want_gate = oracles.fam_channel(x)
    npt.assert_allclose(gate.data, want_gate, atol=1e-6)
    npt.assert_allclose(fc.data, want_fc, atol=1e-6)


def test_zero_conv_gives_half_spatial_gate():
    fam = fam64()
    fam.spatial_conv.weight.data[:] = 0
    fc = T.Tensor(np.random.default_rng(2).standard_normal((1, 3, 5, 5)))
    fs, gate = spatial_aggregate(fc, fam)
    npt.assert_array_equal(gate.data, 0.5)
    npt.assert_array_equal(fs.data, 0.5 * fc.data)
    zero, _ = spatial_aggregate(T.Tensor(np.zeros((1, 3, 5, 5))), fam64(3))
    npt.assert_array_equal(zero.data, 0)


def test_spatial_gate_matches_composed_oracle():
    fam = fam64(4)
    fam.spatial_conv.bias.data[:] = 0.3
    fc = np.random.default_rng(5).standard_normal((2, 4, 6, 5))
    fs, gate = spatial_aggregate(T.Tensor(fc), fam)
    want_fs, want_gate = oracles.fam_spatial(fc, fam.spatial_conv)
    npt.assert_allclose(gate.data, want_gate, atol=1e-6)
    npt.assert_allclose(fs.data, want_fs, atol=1e-6)


def test_spatial_conv_is_7x7_two_to_one():
    assert FAM(np.random.default_rng(0)).spatial_conv.weight.shape == (1, 2, 7, 7)


def test_fam_shape_and_zero_input():
    fam = FAM(np.random.default_rng(6))
    x = T.Tensor(np.random.default_rng(7).standard_normal((2, 16, 8, 8)).astype(np.float32))
    assert fam(x).shape == (2, 16, 8, 8)
    npt.assert_array_equal(fam(T.Tensor(np.zeros((2, 16, 8, 8), np.float32))).data, 0)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 2), st.integers(1, 6), st.integers(1, 7),
                                        st.integers(1, 7)),
                  elements=st.floats(-20, 20)),
       st.integers(0, 2 ** 16))
def test_gates_in_unit_interval_and_attenuate(x, seed):
    fam = fam64(seed)
    fc, cgate = channel_aggregate(T.Tensor(x))
    fs, sgate = spatial_aggregate(fc, fam)
    for g in (cgate.data, sgate.data):
        assert np.all(g > 0) and np.all(g < 1)
    assert fs.shape == x.shape
    assert np.all(np.abs(fam_forward(T.Tensor(x), fam).data) <= np.abs(x))
