"""Deformable attention over multi-camera features, two sampling strategies.

The learning-first strategy (`view_attn_*`) generates 3-d offsets around the
query's reference point inside its view-coordinate frame, then projects every
sample point onto every camera: out-of-view samples contribute nothing, and
attention weights are never renormalized. The projection-first baseline
(`projection_first_*`) projects the bare reference point, drops cameras where
it is not visible, and runs planar 2-d deformable attention around the
surviving pixel locations with the softmax taken over the visible set only.

Per head m, with A the attention weights and W/W' the output/value maps,

    out = sum_m W_m ( sum_{k,j} A[m,k,j] * W'_m sample[m,k,j] )

where sample[m,k,j] reads camera j bilinearly at the projection of the k-th
sample point. Gradients are written by hand; they flow through the sample
locations via the bilinear kernel, the projection Jacobian, and the (constant)
view-frame rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, require
from .geometry import CameraModel, project_jacobian, project_points, view_rotations
from .numerics import (FLOAT, AffineMap, FeatureMap, as_float_array, bilinear_many,
                       bilinear_many_backward, softmax_backward, softmax_norm)


@dataclass
class QueryContext:
    """One voxel query: its feature vector and reference point in the ego frame."""

    query: np.ndarray
    ref_point: np.ndarray

    def __post_init__(self):
        self.query = as_float_array(self.query, name="QueryContext.query")
        self.ref_point = as_float_array(self.ref_point, shape=(3,), name="QueryContext.ref_point")


def _check_heads(channels: int, heads: int, points: int, cameras: int,
                 value_maps, output_maps, offset_head, logit_head, offset_dim: int):
    require(heads >= 1 and points >= 1 and cameras >= 1, "heads, points, cameras must be >= 1")
    require(channels % heads == 0,
            f"channels {channels} not divisible by heads {heads}")
    c_v = channels // heads
    require(len(value_maps) == heads and len(output_maps) == heads,
            "need one value map and one output map per head")
    for m in value_maps:
        require((m.out_dim, m.in_dim) == (c_v, channels),
                f"value map must be {c_v}x{channels}, got {m.out_dim}x{m.in_dim}")
    for m in output_maps:
        require((m.out_dim, m.in_dim) == (channels, c_v),
                f"output map must be {channels}x{c_v}, got {m.out_dim}x{m.in_dim}")
    require((offset_head.out_dim, offset_head.in_dim) == (heads * points * offset_dim, channels),
            "offset head has wrong shape")
    require((logit_head.out_dim, logit_head.in_dim) == (heads * points * cameras, channels),
            "logit head has wrong shape")
    return c_v


@dataclass
class ViewAttnParams:
    """Parameters of the learning-first strategy (3-d offsets)."""

    heads: int
    points: int
    cameras: int
    value_maps: list
    output_maps: list
    offset_head: AffineMap
    logit_head: AffineMap

    def __post_init__(self):
        self.head_dim = _check_heads(self.channels, self.heads, self.points, self.cameras,
                                     self.value_maps, self.output_maps,
                                     self.offset_head, self.logit_head, offset_dim=3)

    @property
    def channels(self) -> int:
        return self.offset_head.in_dim

    def arrays(self, prefix: str = ""):
        yield from _param_arrays(self, prefix)


@dataclass
class ProjFirstParams:
    """Parameters of the projection-first baseline (2-d pixel offsets)."""

    heads: int
    points: int
    cameras: int
    value_maps: list
    output_maps: list
    offset_head: AffineMap
    logit_head: AffineMap

    def __post_init__(self):
        self.head_dim = _check_heads(self.channels, self.heads, self.points, self.cameras,
                                     self.value_maps, self.output_maps,
                                     self.offset_head, self.logit_head, offset_dim=2)

    @property
    def channels(self) -> int:
        return self.offset_head.in_dim

    def arrays(self, prefix: str = ""):
        yield from _param_arrays(self, prefix)


def _param_arrays(params, prefix: str):
    yield prefix + "offset_head.weight", params.offset_head.weight
    yield prefix + "offset_head.bias", params.offset_head.bias
    yield prefix + "logit_head.weight", params.logit_head.weight
    yield prefix + "logit_head.bias", params.logit_head.bias
    for i, m in enumerate(params.value_maps):
        yield f"{prefix}value_maps.{i}.weight", m.weight
        yield f"{prefix}value_maps.{i}.bias", m.bias
    for i, m in enumerate(params.output_maps):
        yield f"{prefix}output_maps.{i}.weight", m.weight
        yield f"{prefix}output_maps.{i}.bias", m.bias


def star_bias(count: int, radius: float, dims: int) -> np.ndarray:
    """Evenly spaced planar directions scaled by radius; z stays 0 for 3-d."""
    angles = 2.0 * np.pi * np.arange(count) / count
    cols = [np.cos(angles) * radius, np.sin(angles) * radius]
    if dims == 3:
        cols.append(np.zeros(count))
    return np.stack(cols, axis=-1).reshape(-1)


def init_view_attn_params(rng: np.random.Generator, channels: int, heads: int = 4,
                          points: int = 4, cameras: int = 6,
                          star_radius: float = 0.5) -> ViewAttnParams:
    """Seeded init: zero offset weights with a radial-star bias, uniform logits."""
    c_v = channels // heads
    value_maps = [AffineMap(rng.normal(0.0, 1.0 / np.sqrt(channels), (c_v, channels)),
                            np.zeros(c_v)) for _ in range(heads)]
    output_maps = [AffineMap(rng.normal(0.0, 1.0 / np.sqrt(c_v), (channels, c_v)),
                             np.zeros(channels)) for _ in range(heads)]
    offset_head = AffineMap(np.zeros((heads * points * 3, channels)),
                            star_bias(heads * points, star_radius, dims=3))
    logit_head = AffineMap.zeros(heads * points * cameras, channels)
    return ViewAttnParams(heads, points, cameras, value_maps, output_maps,
                          offset_head, logit_head)


def init_proj_first_params(rng: np.random.Generator, channels: int, heads: int = 4,
                           points: int = 4, cameras: int = 6,
                           star_radius_px: float = 3.0) -> ProjFirstParams:
    c_v = channels // heads
    value_maps = [AffineMap(rng.normal(0.0, 1.0 / np.sqrt(channels), (c_v, channels)),
                            np.zeros(c_v)) for _ in range(heads)]
    output_maps = [AffineMap(rng.normal(0.0, 1.0 / np.sqrt(c_v), (channels, c_v)),
                             np.zeros(channels)) for _ in range(heads)]
    offset_head = AffineMap(np.zeros((heads * points * 2, channels)),
                            star_bias(heads * points, star_radius_px, dims=2))
    logit_head = AffineMap.zeros(heads * points * cameras, channels)
    return ProjFirstParams(heads, points, cameras, value_maps, output_maps,
                           offset_head, logit_head)


@dataclass
class TraceRecord:
    """Where one query sampled: (head, point, camera) -> pixel, validity, weight."""

    uv: np.ndarray        # (M, K, J, 2)
    in_view: np.ndarray   # (M, K, J) bool
    weight: np.ndarray    # (M, K, J)

    def valid_camera_count(self) -> int:
        return int(np.any(self.in_view, axis=(0, 1)).sum())

    def to_json(self) -> dict:
        m, k, j = self.weight.shape
        entries = []
        for mi in range(m):
            for ki in range(k):
                for ji in range(j):
                    entries.append({
                        "head": mi, "point": ki, "camera": ji,
                        "u": float(self.uv[mi, ki, ji, 0]),
                        "v": float(self.uv[mi, ki, ji, 1]),
                        "in_view": bool(self.in_view[mi, ki, ji]),
                        "weight": float(self.weight[mi, ki, ji]),
                    })
        return {"entries": entries}


def generate_offsets(query: np.ndarray, params) -> np.ndarray:
    """Per-head sample offsets from the query feature; (heads, points, dims)."""
    dims = params.offset_head.out_dim // (params.heads * params.points)
    flat = params.offset_head.weight @ np.asarray(query, dtype=FLOAT) + params.offset_head.bias
    return flat.reshape(params.heads, params.points, dims)


def generate_attention(query: np.ndarray, params) -> np.ndarray:
    """Attention weights from the query; softmax over points x cameras per head."""
    flat = params.logit_head.weight @ np.asarray(query, dtype=FLOAT) + params.logit_head.bias
    logits = flat.reshape(params.heads, params.points * params.cameras)
    return softmax_norm(logits, axis=-1).reshape(params.heads, params.points, params.cameras)


def _feature_arrays(features, params):
    require(len(features) == params.cameras,
            f"expected {params.cameras} feature maps, got {len(features)}")
    arrays = []
    for f in features:
        data = f.data if isinstance(f, FeatureMap) else np.asarray(f, dtype=FLOAT)
        require(data.ndim == 3 and data.shape[2] == params.channels,
                "feature map channel count does not match attention channels")
        arrays.append(data)
    return arrays


def _stacked_maps(maps):
    w = np.stack([m.weight for m in maps])
    b = np.stack([m.bias for m in maps])
    return w, b


def attn_forward_batch(queries: np.ndarray, refs: np.ndarray, params: ViewAttnParams,
                       features, rig, mode: str = "one-dof", keep_cache: bool = False):
    """Vectorized learning-first forward over Q queries.

    Returns (out (Q, C), cache). The cache holds every intermediate needed by
    attn_backward_batch and by trace extraction.
    """
    fdata = _feature_arrays(features, params)
    require(len(rig) == params.cameras, "rig size does not match params.cameras")
    queries = np.asarray(queries, dtype=FLOAT)
    refs = np.asarray(refs, dtype=FLOAT)
    nq = queries.shape[0]
    m, k, j, c = params.heads, params.points, params.cameras, params.channels

    off_flat = queries @ params.offset_head.weight.T + params.offset_head.bias
    offsets = off_flat.reshape(nq, m, k, 3)
    logit_flat = queries @ params.logit_head.weight.T + params.logit_head.bias
    attn = softmax_norm(logit_flat.reshape(nq, m, k * j), axis=-1).reshape(nq, m, k, j)

    rot = view_rotations(refs, mode)
    sample_pts = refs[:, None, None, :] + np.einsum("qab,qmkb->qmka", rot, offsets)

    samples = np.zeros((nq, m, k, j, c), dtype=FLOAT)
    uv = np.zeros((nq, m, k, j, 2), dtype=FLOAT)
    valid = np.zeros((nq, m, k, j), dtype=bool)
    for ji, cam in enumerate(rig):
        uv_j, _, vis_j = project_points(cam, sample_pts)
        vals, _ = bilinear_many(fdata[ji], uv_j[..., 0], uv_j[..., 1])
        samples[:, :, :, ji, :] = np.where(vis_j[..., None], vals, 0.0)
        uv[:, :, :, ji, :] = uv_j
        valid[:, :, :, ji] = vis_j

    w_v, b_v = _stacked_maps(params.value_maps)
    value = np.einsum("qmkjc,mvc->qmkjv", samples, w_v) + b_v[None, :, None, None, :]
    attn_eff = attn * valid
    head_out = np.einsum("qmkj,qmkjv->qmv", attn_eff, value)
    w_o, b_o = _stacked_maps(params.output_maps)
    out = np.einsum("qmv,mcv->qc", head_out, w_o) + b_o.sum(axis=0)

    cache = None
    if keep_cache:
        cache = {
            "queries": queries, "refs": refs, "attn": attn, "valid": valid, "uv": uv,
            "samples": samples, "value": value, "head_out": head_out,
            "sample_pts": sample_pts, "rot": rot, "mode": mode,
        }
    return out, cache


def attn_backward_batch(cache: dict, params: ViewAttnParams, features, rig,
                        g_out: np.ndarray, want_feature_grads: bool = False):
    """Gradients of sum(g_out * out) for the learning-first strategy.

    Returns (grads, g_queries, feature_grads) where grads maps parameter names
    (as yielded by params.arrays()) to arrays, and feature_grads is a list of
    per-camera arrays or None.
    """
    fdata = _feature_arrays(features, params)
    g_out = np.asarray(g_out, dtype=FLOAT)
    queries = cache["queries"]
    attn, valid, uv = cache["attn"], cache["valid"], cache["uv"]
    samples, value, head_out = cache["samples"], cache["value"], cache["head_out"]
    sample_pts, rot = cache["sample_pts"], cache["rot"]
    nq = queries.shape[0]
    m, k, j = params.heads, params.points, params.cameras

    w_v, _ = _stacked_maps(params.value_maps)
    w_o, _ = _stacked_maps(params.output_maps)

    g_wo = np.einsum("qc,qmv->mcv", g_out, head_out)
    g_bo = np.broadcast_to(g_out.sum(axis=0), (m, params.channels)).copy()
    g_head = np.einsum("qc,mcv->qmv", g_out, w_o)

    attn_eff = attn * valid
    g_attn_eff = np.einsum("qmv,qmkjv->qmkj", g_head, value)
    g_value = attn_eff[..., None] * g_head[:, :, None, None, :]
    g_wv = np.einsum("qmkjv,qmkjc->mvc", g_value, samples)
    g_bv = g_value.sum(axis=(0, 2, 3))
    g_samples = np.einsum("qmkjv,mvc->qmkjc", g_value, w_v)

    feature_grads = [np.zeros_like(f) for f in fdata] if want_feature_grads else None
    g_pts = np.zeros((nq, m, k, 3), dtype=FLOAT)
    for ji, cam in enumerate(rig):
        sink = feature_grads[ji] if want_feature_grads else None
        du, dv = bilinear_many_backward(fdata[ji], uv[..., ji, 0], uv[..., ji, 1],
                                        g_samples[:, :, :, ji, :], sink)
        du = du * valid[..., ji]
        dv = dv * valid[..., ji]
        jac = project_jacobian(cam, sample_pts)
        g_pts += jac[..., 0, :] * du[..., None] + jac[..., 1, :] * dv[..., None]

    g_offsets = np.einsum("qab,qmka->qmkb", rot, g_pts)
    g_off_flat = g_offsets.reshape(nq, m * k * 3)
    g_attn = g_attn_eff * valid
    g_logits = softmax_backward(attn.reshape(nq, m, k * j), g_attn.reshape(nq, m, k * j),
                                axis=-1).reshape(nq, m * k * j)

    grads = {
        "offset_head.weight": g_off_flat.T @ queries,
        "offset_head.bias": g_off_flat.sum(axis=0),
        "logit_head.weight": g_logits.T @ queries,
        "logit_head.bias": g_logits.sum(axis=0),
    }
    for i in range(m):
        grads[f"value_maps.{i}.weight"] = g_wv[i]
        grads[f"value_maps.{i}.bias"] = g_bv[i]
        grads[f"output_maps.{i}.weight"] = g_wo[i]
        grads[f"output_maps.{i}.bias"] = g_bo[i]
    g_queries = g_off_flat @ params.offset_head.weight + g_logits @ params.logit_head.weight
    return grads, g_queries, feature_grads


def view_attn_forward(ctx: QueryContext, params: ViewAttnParams, features, rig,
                      mode: str = "one-dof"):
    """Single-query learning-first attention; returns (out, TraceRecord)."""
    out, cache = attn_forward_batch(ctx.query[None, :], ctx.ref_point[None, :],
                                    params, features, rig, mode, keep_cache=True)
    trace = TraceRecord(uv=cache["uv"][0], in_view=cache["valid"][0],
                        weight=(cache["attn"] * cache["valid"])[0])
    return out[0], trace


def view_attn_backward(ctx: QueryContext, params: ViewAttnParams, features, rig,
                       upstream: np.ndarray, mode: str = "one-dof",
                       want_feature_grads: bool = True) -> dict:
    """Gradients of sum(upstream * out) w.r.t. parameters, query, and features."""
    _, cache = attn_forward_batch(ctx.query[None, :], ctx.ref_point[None, :],
                                  params, features, rig, mode, keep_cache=True)
    grads, g_queries, feature_grads = attn_backward_batch(
        cache, params, features, rig, np.asarray(upstream, dtype=FLOAT)[None, :],
        want_feature_grads=want_feature_grads)
    grads["query"] = g_queries[0]
    if want_feature_grads:
        for ji, g in enumerate(feature_grads):
            grads[f"features.{ji}"] = g
    return grads


def proj_first_forward_batch(queries: np.ndarray, refs: np.ndarray, params: ProjFirstParams,
                             features, rig, keep_cache: bool = False):
    """Vectorized projection-first baseline forward.

    The reference point is projected per camera; invisible cameras are skipped
    entirely and the softmax runs over the (point, visible camera) set. A
    query visible nowhere returns an exact zero vector.
    """
    fdata = _feature_arrays(features, params)
    require(len(rig) == params.cameras, "rig size does not match params.cameras")
    queries = np.asarray(queries, dtype=FLOAT)
    refs = np.asarray(refs, dtype=FLOAT)
    nq = queries.shape[0]
    m, k, j, c = params.heads, params.points, params.cameras, params.channels

    off_flat = queries @ params.offset_head.weight.T + params.offset_head.bias
    offsets = off_flat.reshape(nq, m, k, 2)
    logits = (queries @ params.logit_head.weight.T + params.logit_head.bias).reshape(nq, m, k, j)

    ref_uv = np.zeros((nq, j, 2), dtype=FLOAT)
    cam_vis = np.zeros((nq, j), dtype=bool)
    for ji, cam in enumerate(rig):
        uv_j, _, vis_j = project_points(cam, refs)
        ref_uv[:, ji, :] = uv_j
        cam_vis[:, ji] = vis_j

    # masked softmax over points x visible cameras, per head
    mask = np.broadcast_to(cam_vis[:, None, None, :], logits.shape)
    neg_inf = np.full_like(logits, -np.inf)
    z = np.where(mask, logits, neg_inf)
    zmax = z.reshape(nq, m, k * j).max(axis=-1).reshape(nq, m, 1, 1)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    expz = np.where(mask, np.exp(z - zmax), 0.0)
    denom = expz.reshape(nq, m, k * j).sum(axis=-1).reshape(nq, m, 1, 1)
    attn = expz / np.where(denom > 0.0, denom, 1.0)

    # (Q, M, K, J, 2): reference pixel per camera plus the shared 2-d offset
    uv = ref_uv[:, None, None, :, :] + offsets[:, :, :, None, :]
    samples = np.zeros((nq, m, k, j, c), dtype=FLOAT)
    sample_ok = np.zeros((nq, m, k, j), dtype=bool)
    for ji in range(j):
        vals, ok = bilinear_many(fdata[ji], uv[..., ji, 0], uv[..., ji, 1])
        ok = ok & cam_vis[:, ji][:, None, None]
        samples[:, :, :, ji, :] = np.where(ok[..., None], vals, 0.0)
        sample_ok[:, :, :, ji] = ok

    w_v, b_v = _stacked_maps(params.value_maps)
    value = np.einsum("qmkjc,mvc->qmkjv", samples, w_v) + b_v[None, :, None, None, :]
    attn_eff = attn * sample_ok
    head_out = np.einsum("qmkj,qmkjv->qmv", attn_eff, value)
    w_o, b_o = _stacked_maps(params.output_maps)
    out = np.einsum("qmv,mcv->qc", head_out, w_o) + b_o.sum(axis=0)
    any_vis = cam_vis.any(axis=1)
    out = np.where(any_vis[:, None], out, 0.0)

    cache = None
    if keep_cache:
        cache = {
            "queries": queries, "refs": refs, "attn": attn, "cam_vis": cam_vis,
            "sample_ok": sample_ok, "uv": uv, "samples": samples, "value": value,
            "head_out": head_out, "any_vis": any_vis, "mask": mask,
        }
    return out, cache


def proj_first_backward_batch(cache: dict, params: ProjFirstParams, features, rig,
                              g_out: np.ndarray, want_feature_grads: bool = False):
    """Gradients for the projection-first baseline (shared 2-d pixel offsets)."""
    fdata = _feature_arrays(features, params)
    g_out = np.asarray(g_out, dtype=FLOAT) * cache["any_vis"][:, None]
    queries = cache["queries"]
    attn, sample_ok, uv = cache["attn"], cache["sample_ok"], cache["uv"]
    samples, value, head_out = cache["samples"], cache["value"], cache["head_out"]
    mask = cache["mask"]
    nq = queries.shape[0]
    m, k, j = params.heads, params.points, params.cameras

    w_v, _ = _stacked_maps(params.value_maps)
    w_o, _ = _stacked_maps(params.output_maps)

    g_wo = np.einsum("qc,qmv->mcv", g_out, head_out)
    g_bo = np.broadcast_to(g_out.sum(axis=0), (m, params.channels)).copy()
    g_head = np.einsum("qc,mcv->qmv", g_out, w_o)

    attn_eff = attn * sample_ok
    g_attn_eff = np.einsum("qmv,qmkjv->qmkj", g_head, value)
    g_value = attn_eff[..., None] * g_head[:, :, None, None, :]
    g_wv = np.einsum("qmkjv,qmkjc->mvc", g_value, samples)
    g_bv = g_value.sum(axis=(0, 2, 3))
    g_samples = np.einsum("qmkjv,mvc->qmkjc", g_value, w_v)

    feature_grads = [np.zeros_like(f) for f in fdata] if want_feature_grads else None
    g_uv = np.zeros((nq, m, k, j, 2), dtype=FLOAT)
    for ji in range(j):
        sink = feature_grads[ji] if want_feature_grads else None
        du, dv = bilinear_many_backward(fdata[ji], uv[..., ji, 0], uv[..., ji, 1],
                                        g_samples[:, :, :, ji, :], sink)
        g_uv[..., ji, 0] = du * sample_ok[..., ji]
        g_uv[..., ji, 1] = dv * sample_ok[..., ji]

    g_offsets = g_uv.sum(axis=3)  # shared across cameras
    g_off_flat = g_offsets.reshape(nq, m * k * 2)

    g_attn = np.where(mask, g_attn_eff * sample_ok, 0.0)
    g_logits_m = softmax_backward(attn.reshape(nq, m, k * j), g_attn.reshape(nq, m, k * j),
                                  axis=-1).reshape(nq, m, k, j)
    g_logits = np.where(mask, g_logits_m, 0.0).reshape(nq, m * k * j)

    grads = {
        "offset_head.weight": g_off_flat.T @ queries,
        "offset_head.bias": g_off_flat.sum(axis=0),
        "logit_head.weight": g_logits.T @ queries,
        "logit_head.bias": g_logits.sum(axis=0),
    }
    for i in range(m):
        grads[f"value_maps.{i}.weight"] = g_wv[i]
        grads[f"value_maps.{i}.bias"] = g_bv[i]
        grads[f"output_maps.{i}.weight"] = g_wo[i]
        grads[f"output_maps.{i}.bias"] = g_bo[i]
    g_queries = g_off_flat @ params.offset_head.weight + g_logits @ params.logit_head.weight
    return grads, g_queries, feature_grads


def projection_first_forward(ctx: QueryContext, params: ProjFirstParams, features, rig):
    """Single-query projection-first baseline; returns (out, TraceRecord)."""
    out, cache = proj_first_forward_batch(ctx.query[None, :], ctx.ref_point[None, :],
                                          params, features, rig, keep_cache=True)
    trace = TraceRecord(uv=cache["uv"][0], in_view=cache["sample_ok"][0],
                        weight=(cache["attn"] * cache["sample_ok"])[0])
    return out[0], trace


def projection_first_backward(ctx: QueryContext, params: ProjFirstParams, features, rig,
                              upstream: np.ndarray, want_feature_grads: bool = True) -> dict:
    _, cache = proj_first_forward_batch(ctx.query[None, :], ctx.ref_point[None, :],
                                        params, features, rig, keep_cache=True)
    grads, g_queries, feature_grads = proj_first_backward_batch(
        cache, params, features, rig, np.asarray(upstream, dtype=FLOAT)[None, :],
        want_feature_grads=want_feature_grads)
    grads["query"] = g_queries[0]
    if want_feature_grads:
        for ji, g in enumerate(feature_grads):
            grads[f"features.{ji}"] = g
    return grads


def camera_coverage(p, rig) -> int:
    """Number of rig cameras in which point p is visible."""
    p = as_float_array(p, shape=(3,), name="p")
    count = 0
    for cam in rig:
        _, _, vis = project_points(cam, p)
        count += int(vis)
    return count


def batch_valid_camera_counts(cache: dict) -> np.ndarray:
    """Per-query number of cameras holding at least one valid sample."""
    valid = cache["valid"] if "valid" in cache else cache["sample_ok"]
    return np.any(valid, axis=(1, 2)).sum(axis=1)
