"""Dense-array primitives: feature maps, affine maps, bilinear sampling, softmax.

Everything is float64. Feature maps are row-major and channel-last with shape
(height, width, channels). A sampling location `uv = (u, v)` puts `u` along
the width axis (columns) and `v` along the height axis (rows); the location is
valid iff `0 <= u <= width - 1` and `0 <= v <= height - 1`. Out-of-bounds
samples return zeros and a False validity flag, with no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, require

FLOAT = np.float64


def as_float_array(values, shape=None, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray, optionally enforcing a shape."""
    arr = np.asarray(values, dtype=FLOAT)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ContractViolation(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name}: contains non-finite values")
    return arr


@dataclass
class DenseGrid:
    """N-dimensional float64 array with validated shape and finite entries."""

    data: np.ndarray

    def __post_init__(self):
        self.data = as_float_array(self.data, name="DenseGrid.data")

    @property
    def shape(self) -> tuple:
        return tuple(self.data.shape)

    @classmethod
    def zeros(cls, shape) -> "DenseGrid":
        return cls(np.zeros(shape, dtype=FLOAT))


@dataclass
class FeatureMap:
    """Dense (height, width, channels) float64 feature image."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=FLOAT)
        if arr.ndim != 3:
            raise ContractViolation(f"FeatureMap: expected 3-d (H, W, C) data, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ContractViolation(f"FeatureMap: empty axis in shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("FeatureMap: contains non-finite values")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class AffineMap:
    """y = weight @ x + bias with weight (out_dim, in_dim) and bias (out_dim,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = as_float_array(self.weight, name="AffineMap.weight")
        if self.weight.ndim != 2:
            raise ContractViolation("AffineMap.weight must be 2-d")
        self.bias = as_float_array(self.bias, shape=(self.weight.shape[0],), name="AffineMap.bias")

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int) -> "AffineMap":
        return cls(np.zeros((out_dim, in_dim), dtype=FLOAT), np.zeros(out_dim, dtype=FLOAT))

    @classmethod
    def identity(cls, dim: int) -> "AffineMap":
        return cls(np.eye(dim, dtype=FLOAT), np.zeros(dim, dtype=FLOAT))


def affine_apply(m: AffineMap, x: np.ndarray) -> np.ndarray:
    """Apply an affine map to x of shape (..., in_dim); returns (..., out_dim)."""
    x = np.asarray(x, dtype=FLOAT)
    if x.shape[-1] != m.in_dim:
        raise ContractViolation(
            f"affine_apply: input dim {x.shape[-1]} does not match map in_dim {m.in_dim}"
        )
    return x @ m.weight.T + m.bias


def affine_backward(m: AffineMap, x: np.ndarray, g_out: np.ndarray):
    """Gradients of sum(g_out * affine_apply(m, x)) w.r.t. weight, bias, x.

    x: (..., in_dim), g_out: (..., out_dim). Leading axes are reduced into the
    parameter gradients.
    """
    x = np.asarray(x, dtype=FLOAT)
    g_out = np.asarray(g_out, dtype=FLOAT)
    xf = x.reshape(-1, m.in_dim)
    gf = g_out.reshape(-1, m.out_dim)
    g_weight = gf.T @ xf
    g_bias = gf.sum(axis=0)
    g_x = (gf @ m.weight).reshape(x.shape)
    return g_weight, g_bias, g_x


def softmax_norm(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction) along `axis`."""
    z = np.asarray(logits, dtype=FLOAT)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, g_probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient through softmax given its output `probs` and upstream g_probs."""
    dot = np.sum(g_probs * probs, axis=axis, keepdims=True)
    return probs * (g_probs - dot)


def _corner_indices(u: np.ndarray, v: np.ndarray, height: int, width: int):
    """Lower-left corner indices and fractional weights for bilinear sampling.

    Clamps the corner cell so sampling is exact at integer coordinates,
    including u == width - 1 and v == height - 1.
    """
    x0 = np.floor(u)
    y0 = np.floor(v)
    x0 = np.clip(x0, 0, max(width - 2, 0)).astype(np.int64)
    y0 = np.clip(y0, 0, max(height - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = u - x0
    fy = v - y0
    return x0, y0, x1, y1, fx, fy


def bilinear_valid(u: np.ndarray, v: np.ndarray, height: int, width: int) -> np.ndarray:
    return (u >= 0.0) & (u <= width - 1.0) & (v >= 0.0) & (v <= height - 1.0)


def bilinear_many(data: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Bilinear sample a (H, W, C) array at broadcast arrays of (u, v).

    Returns (values, valid): values has shape u.shape + (C,), zeros where
    invalid; valid is boolean with u's shape.
    """
    height, width = data.shape[0], data.shape[1]
    u = np.asarray(u, dtype=FLOAT)
    v = np.asarray(v, dtype=FLOAT)
    valid = bilinear_valid(u, v, height, width)
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    x0, y0, x1, y1, fx, fy = _corner_indices(uc, vc, height, width)
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    vals = (
        data[y0, x0] * w00[..., None]
        + data[y0, x1] * w10[..., None]
        + data[y1, x0] * w01[..., None]
        + data[y1, x1] * w11[..., None]
    )
    vals = np.where(valid[..., None], vals, 0.0)
    return vals, valid


def bilinear_many_backward(data: np.ndarray, u: np.ndarray, v: np.ndarray, g_vals: np.ndarray,
                           grad_data: np.ndarray | None = None):
    """Gradients of bilinear_many w.r.t. (u, v) and, optionally, the map.

    g_vals has shape u.shape + (C,). Returns (g_u, g_v); if grad_data is
    given (H, W, C), corner contributions are scattered into it in place.
    Invalid locations receive zero gradient (hard cutoff).
    """
    height, width = data.shape[0], data.shape[1]
    u = np.asarray(u, dtype=FLOAT)
    v = np.asarray(v, dtype=FLOAT)
    valid = bilinear_valid(u, v, height, width)
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    x0, y0, x1, y1, fx, fy = _corner_indices(uc, vc, height, width)
    p00 = data[y0, x0]
    p10 = data[y0, x1]
    p01 = data[y1, x0]
    p11 = data[y1, x1]
    gv = np.where(valid[..., None], g_vals, 0.0)
    # d value / d u = (1 - fy) (p10 - p00) + fy (p11 - p01), then dot upstream
    du = np.sum(gv * ((1.0 - fy)[..., None] * (p10 - p00) + fy[..., None] * (p11 - p01)), axis=-1)
    dv = np.sum(gv * ((1.0 - fx)[..., None] * (p01 - p00) + fx[..., None] * (p11 - p10)), axis=-1)
    du = np.where(valid, du, 0.0)
    dv = np.where(valid, dv, 0.0)
    if grad_data is not None:
        w00 = (1.0 - fx) * (1.0 - fy)
        w10 = fx * (1.0 - fy)
        w01 = (1.0 - fx) * fy
        w11 = fx * fy
        np.add.at(grad_data, (y0, x0), gv * w00[..., None])
        np.add.at(grad_data, (y0, x1), gv * w10[..., None])
        np.add.at(grad_data, (y1, x0), gv * w01[..., None])
        np.add.at(grad_data, (y1, x1), gv * w11[..., None])
    return du, dv


def bilinear_sample(fmap: FeatureMap, uv) -> tuple[np.ndarray, bool]:
    """Sample one location from a feature map.

    Returns (value, valid): value is a (channels,) vector, zeros when the
    location falls outside [0, width-1] x [0, height-1].
    """
    uv = as_float_array(uv, shape=(2,), name="uv")
    vals, valid = bilinear_many(fmap.data, uv[0], uv[1])
    return vals, bool(valid)


def bilinear_sample_grad(fmap: FeatureMap, uv, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of sum(upstream * bilinear_sample(fmap, uv)).

    Returns (grad_uv, grad_map). grad_map has the map's shape and is nonzero
    in at most the four touched pixels. Out-of-bounds locations yield zeros.
    """
    uv = as_float_array(uv, shape=(2,), name="uv")
    upstream = as_float_array(upstream, shape=(fmap.channels,), name="upstream")
    grad_map = np.zeros_like(fmap.data)
    du, dv = bilinear_many_backward(fmap.data, uv[0], uv[1], upstream, grad_map)
    return np.array([du, dv], dtype=FLOAT), grad_map


def assert_same_dim(name: str, got: int, expected: int) -> None:
    require(got == expected, f"{name}: dimension {got} does not match expected {expected}")
