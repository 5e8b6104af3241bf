import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewocc.errors import ContractViolation
from viewocc.numerics import (FLOAT, AffineMap, FeatureMap, affine_apply, affine_backward,
                              bilinear_many, bilinear_many_backward, bilinear_sample,
                              bilinear_sample_grad, softmax_backward, softmax_norm)

from helpers import central_diff, rel_err


# --- bilinear sampling -------------------------------------------------------
# data column-major in u: value(u, v) interpolates the four surrounding pixels.
# For data [[1, 3], [2, 5]] (row v=0: 1,3; row v=1: 2,5) at (u, v) = (0.25, 0.5):
#   top row:    1 + 0.25 * (3 - 1) = 1.5
#   bottom row: 2 + 0.25 * (5 - 2) = 2.75
#   blend:      0.5 * 1.5 + 0.5 * 2.75 = 2.125

DATA_2X2 = np.array([[[1.0], [3.0]], [[2.0], [5.0]]])


def test_bilinear_hand_value():
    vals, valid = bilinear_many(DATA_2X2, np.array(0.25), np.array(0.5))
    assert valid
    assert abs(vals[0] - 2.125) < 1e-15


def test_bilinear_hand_gradient():
    # du = (1-fy)(p10-p00) + fy(p11-p01) = 0.5*2 + 0.5*3 = 2.5
    # dv = (1-fx)(p01-p00) + fx(p11-p10) = 0.75*1 + 0.25*2 = 1.25
    du, dv = bilinear_many_backward(DATA_2X2, np.array(0.25), np.array(0.5),
                                    np.array([1.0]))
    assert abs(du - 2.5) < 1e-15
    assert abs(dv - 1.25) < 1e-15


def test_bilinear_outside_is_zero_and_invalid():
    for u, v in [(-0.1, 0.5), (1.1, 0.5), (0.5, -0.01), (0.5, 1.0001)]:
        vals, valid = bilinear_many(DATA_2X2, np.array(u), np.array(v))
        assert not valid
        assert vals[0] == 0.0


def test_bilinear_closed_boundary():
    # the full pixel box [0, W-1] x [0, H-1] is valid, corners included
    for u, v in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]:
        vals, valid = bilinear_many(DATA_2X2, np.array(u), np.array(v))
        assert valid
        assert vals[0] == DATA_2X2[int(v), int(u), 0]


def test_bilinear_feature_scatter():
    g = np.zeros_like(DATA_2X2)
    bilinear_many_backward(DATA_2X2, np.array(0.25), np.array(0.5), np.array([2.0]), g)
    # corner weights: w00=0.375, w10=0.125, w01=0.375, w11=0.125, times upstream 2
    expect = np.array([[[0.75], [0.25]], [[0.75], [0.25]]])
    np.testing.assert_allclose(g, expect, atol=1e-15)


def test_bilinear_gradient_matches_fd():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(5, 6, 3))
    uv = np.array([2.3, 1.7])
    g_up = rng.normal(size=3)
    fmap = FeatureMap(data)
    grad_uv, grad_map = bilinear_sample_grad(fmap, uv, g_up)
    for axis in range(2):
        fd = central_diff(lambda: float(bilinear_sample(fmap, uv)[0] @ g_up), uv, (axis,))
        assert rel_err(grad_uv[axis], fd) < 1e-8
    idx = (1, 2, 0)
    fd = central_diff(lambda: float(bilinear_sample(fmap, uv)[0] @ g_up), data, idx)
    assert rel_err(grad_map[idx], fd) < 1e-8


@given(st.integers(0, 4), st.integers(0, 5))
@settings(max_examples=30, deadline=None)
def test_bilinear_exact_on_lattice(iy, ix):
    rng = np.random.default_rng(iy * 7 + ix)
    data = rng.normal(size=(5, 6, 2))
    vals, valid = bilinear_many(data, np.array(float(ix)), np.array(float(iy)))
    assert valid
    np.testing.assert_array_equal(vals, data[iy, ix])


# --- softmax -----------------------------------------------------------------
# logits (0, ln 2, ln 4) exponentiate to (1, 2, 4): probabilities (1, 2, 4)/7.


def test_softmax_hand_value():
    probs = softmax_norm(np.log(np.array([1.0, 2.0, 4.0])), axis=-1)
    np.testing.assert_allclose(probs, np.array([1.0, 2.0, 4.0]) / 7.0, atol=1e-15)


def test_softmax_backward_hand_value():
    # dz_i = s_i (g_i - sum_j g_j s_j); with g = (1,0,0): sum = 1/7
    # dz = (1/7*6/7, -2/49, -4/49)
    probs = np.array([1.0, 2.0, 4.0]) / 7.0
    dz = softmax_backward(probs, np.array([1.0, 0.0, 0.0]), axis=-1)
    np.testing.assert_allclose(dz, np.array([6.0, -2.0, -4.0]) / 49.0, atol=1e-15)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8),
       st.floats(-50, 50))
@settings(max_examples=60, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(logits, shift):
    z = np.array(logits)
    s = softmax_norm(z, axis=-1)
    assert abs(s.sum() - 1.0) < 1e-12
    assert np.all(s >= 0)
    np.testing.assert_allclose(softmax_norm(z + shift, axis=-1), s, atol=1e-12)


def test_softmax_backward_matches_fd():
    rng = np.random.default_rng(11)
    z = rng.normal(size=(2, 5))
    g = rng.normal(size=(2, 5))
    probs = softmax_norm(z, axis=-1)
    dz = softmax_backward(probs, g, axis=-1)
    fd = central_diff(lambda: float((softmax_norm(z, axis=-1) * g).sum()), z, (1, 3))
    assert rel_err(dz[1, 3], fd) < 1e-7


# --- affine maps -------------------------------------------------------------


def test_affine_hand_values():
    m = AffineMap(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
    x = np.array([[1.0, 1.0]])
    np.testing.assert_allclose(affine_apply(m, x), [[3.5, 6.5]], atol=1e-15)
    g_w, g_b, g_x = affine_backward(m, x, np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(g_w, [[1.0, 1.0], [2.0, 2.0]], atol=1e-15)
    np.testing.assert_allclose(g_b, [1.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(g_x, [[7.0, 10.0]], atol=1e-15)


def test_affine_shape_validation():
    with pytest.raises(ContractViolation):
        AffineMap(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ContractViolation):
        AffineMap(np.array([1.0, 2.0]), np.zeros(2))


def test_feature_map_contract():
    fm = FeatureMap(np.zeros((4, 6, 3)))
    assert (fm.height, fm.width, fm.channels) == (4, 6, 3)
    with pytest.raises(ContractViolation):
        FeatureMap(np.zeros((4, 6)))
    with pytest.raises(ContractViolation):
        FeatureMap(np.full((2, 2, 1), np.nan))
