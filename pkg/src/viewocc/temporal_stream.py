"""Streaming BEV state: squeeze/unsqueeze, ego-motion warping, temporal fusion.

A voxel grid (Z, H, W, C_voxel) squeezes to a BEV grid (H, W, C_bev) by
concatenating its z-layers channel-wise (z-major) and applying one affine map
per cell; unsqueeze inverts the layout with a second map. History lives in a
FIFO MemoryQueue of (BEVGrid, Pose) pairs. Warping pulls: each output cell
looks up its center in the older frame via the inverse relative pose and
samples bilinearly, zero outside; the relative rotation must keep the z-axis
fixed (planar motion).

Temporal attention treats each queued frame, warped into the current ego
frame, as one attention level. Every current cell generates per-level 2-d
offsets (cell units) and logits from its own feature, softmaxes over
points x levels, aggregates value-mapped samples, adds the result to the
current cell, and runs a per-cell feed-forward affine. An empty queue leaves
the grid untouched. Stored history is a constant for gradients: the backward
pass differentiates parameters and the current frame only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blobio
from .errors import ContractViolation, require
from .geometry import Pose, relative_pose
from .numerics import (FLOAT, AffineMap, as_float_array, bilinear_many,
                       bilinear_many_backward, softmax_backward, softmax_norm)

PLANAR_TOL = 1e-6


@dataclass
class VoxelGrid:
    """(Z, H, W, C) float64 features; origin is the metric min corner (x, y, z)."""

    data: np.ndarray
    pitch: float
    origin: np.ndarray

    def __post_init__(self):
        self.data = as_float_array(self.data, name="VoxelGrid.data")
        require(self.data.ndim == 4, "VoxelGrid.data must be (Z, H, W, C)")
        require(self.pitch > 0, "VoxelGrid.pitch must be positive")
        self.origin = as_float_array(self.origin, shape=(3,), name="VoxelGrid.origin")


@dataclass
class BEVGrid:
    """(H, W, C) float64 features; origin is the metric min corner (x, y)."""

    data: np.ndarray
    pitch: float
    origin: np.ndarray

    def __post_init__(self):
        self.data = as_float_array(self.data, name="BEVGrid.data")
        require(self.data.ndim == 3, "BEVGrid.data must be (H, W, C)")
        require(self.pitch > 0, "BEVGrid.pitch must be positive")
        self.origin = as_float_array(self.origin, shape=(2,), name="BEVGrid.origin")

    def cell_centers(self):
        """Metric centers: xs (W,) along columns, ys (H,) along rows."""
        h, w = self.data.shape[0], self.data.shape[1]
        xs = self.origin[0] + (np.arange(w, dtype=FLOAT) + 0.5) * self.pitch
        ys = self.origin[1] + (np.arange(h, dtype=FLOAT) + 0.5) * self.pitch
        return xs, ys


def _same_layout(a: BEVGrid, b: BEVGrid) -> bool:
    return (a.data.shape == b.data.shape and a.pitch == b.pitch
            and np.array_equal(a.origin, b.origin))


class MemoryQueue:
    """FIFO of (BEVGrid, Pose) with fixed capacity; oldest entry evicted first."""

    def __init__(self, capacity: int):
        require(capacity >= 1, "MemoryQueue capacity must be >= 1")
        self.capacity = int(capacity)
        self.entries: list[tuple[BEVGrid, Pose]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, bev: BEVGrid, pose: Pose) -> "MemoryQueue":
        if self.entries and not _same_layout(self.entries[0][0], bev):
            raise ContractViolation("MemoryQueue: pushed grid layout does not match queue")
        self.entries.append((bev, pose))
        if len(self.entries) > self.capacity:
            self.entries.pop(0)
        return self

    def clear(self) -> None:
        self.entries = []


def queue_push(queue: MemoryQueue, bev: BEVGrid, pose: Pose) -> MemoryQueue:
    """Append the newest frame, evicting the oldest beyond capacity."""
    return queue.push(bev, pose)


def save_queue(prefix, queue: MemoryQueue) -> None:
    arrays = {}
    poses = []
    layout = None
    for i, (bev, pose) in enumerate(queue.entries):
        arrays[f"bev.{i:04d}"] = bev.data
        poses.append(pose.to_json())
        layout = {"pitch": bev.pitch, "origin": [float(x) for x in bev.origin]}
    meta = {"capacity": queue.capacity, "count": len(queue.entries),
            "poses": poses, "layout": layout}
    blobio.write_blob(prefix, arrays, meta)


def load_queue(prefix) -> MemoryQueue:
    arrays, meta = blobio.read_blob(prefix)
    queue = MemoryQueue(int(meta["capacity"]))
    layout = meta.get("layout")
    for i in range(int(meta["count"])):
        data = arrays[f"bev.{i:04d}"]
        bev = BEVGrid(data, float(layout["pitch"]), layout["origin"])
        queue.push(bev, Pose.from_json(meta["poses"][i]))
    return queue


def squeeze_bev(voxels: VoxelGrid, proj: AffineMap) -> BEVGrid:
    """Concatenate z-layers channel-wise (z-major) and project per cell."""
    z, h, w, c = voxels.data.shape
    require(proj.in_dim == z * c,
            f"squeeze projection expects {proj.in_dim} inputs, grid provides {z * c}")
    columns = voxels.data.transpose(1, 2, 0, 3).reshape(h, w, z * c)
    out = columns @ proj.weight.T + proj.bias
    return BEVGrid(out, voxels.pitch, voxels.origin[:2])


def unsqueeze_voxel(bev: BEVGrid, proj: AffineMap, z_layers: int, z0: float) -> VoxelGrid:
    """Project each BEV cell back to a stack of z-major voxel features."""
    h, w, c_bev = bev.data.shape
    require(proj.in_dim == c_bev, "unsqueeze projection input does not match BEV channels")
    require(proj.out_dim % z_layers == 0, "unsqueeze projection output not divisible by z_layers")
    c = proj.out_dim // z_layers
    out = bev.data @ proj.weight.T + proj.bias
    data = out.reshape(h, w, z_layers, c).transpose(2, 0, 1, 3)
    origin = np.array([bev.origin[0], bev.origin[1], z0], dtype=FLOAT)
    return VoxelGrid(np.ascontiguousarray(data), bev.pitch, origin)


def check_planar(rel: Pose, tol: float = PLANAR_TOL) -> None:
    """Require that rel's rotation maps the z-axis to itself within tol."""
    zhat = np.array([0.0, 0.0, 1.0])
    err = np.abs(rel.rotation @ zhat - zhat).max()
    if err > tol:
        raise ContractViolation(f"warp requires planar motion: z-axis moves by {err:.3e}")


def warp_bev(bev: BEVGrid, rel: Pose) -> BEVGrid:
    """Resample an older BEV grid into the current frame.

    rel maps older-frame coordinates into the current frame; each current
    cell center is pulled through rel's inverse and sampled bilinearly from
    the older grid, zero where it lands outside.
    """
    check_planar(rel)
    inv = rel.inverse()
    xs, ys = bev.cell_centers()
    xg, yg = np.meshgrid(xs, ys)
    src_x = inv.rotation[0, 0] * xg + inv.rotation[0, 1] * yg + inv.translation[0]
    src_y = inv.rotation[1, 0] * xg + inv.rotation[1, 1] * yg + inv.translation[1]
    iu = (src_x - bev.origin[0]) / bev.pitch - 0.5
    iv = (src_y - bev.origin[1]) / bev.pitch - 0.5
    vals, _ = bilinear_many(bev.data, iu, iv)
    return BEVGrid(vals, bev.pitch, bev.origin)


@dataclass
class TemporalParams:
    """Per-cell temporal attention over up to `levels` warped memory frames."""

    points: int
    levels: int
    offset_head: AffineMap
    logit_head: AffineMap
    value_map: AffineMap
    output_map: AffineMap
    feed_forward: AffineMap

    def __post_init__(self):
        c = self.channels
        require(self.points >= 1 and self.levels >= 1, "points and levels must be >= 1")
        require(self.offset_head.out_dim == self.points * self.levels * 2,
                "temporal offset head has wrong output size")
        require(self.logit_head.out_dim == self.points * self.levels
                and self.logit_head.in_dim == c, "temporal logit head has wrong shape")
        for name, m in (("value_map", self.value_map), ("output_map", self.output_map),
                        ("feed_forward", self.feed_forward)):
            require(m.in_dim == c and m.out_dim == c, f"temporal {name} must be {c}x{c}")

    @property
    def channels(self) -> int:
        return self.offset_head.in_dim

    def arrays(self, prefix: str = ""):
        for name in ("offset_head", "logit_head", "value_map", "output_map", "feed_forward"):
            m = getattr(self, name)
            yield f"{prefix}{name}.weight", m.weight
            yield f"{prefix}{name}.bias", m.bias


def init_temporal_params(rng: np.random.Generator, channels: int, points: int = 4,
                         levels: int = 4, star_radius_cells: float = 0.9) -> TemporalParams:
    from .view_attention import star_bias
    offset_head = AffineMap(np.zeros((points * levels * 2, channels)),
                            star_bias(points * levels, star_radius_cells, dims=2))
    logit_head = AffineMap.zeros(points * levels, channels)
    value_map = AffineMap(rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, channels)),
                          np.zeros(channels))
    output_map = AffineMap(rng.normal(0.0, 0.5 / np.sqrt(channels), (channels, channels)),
                           np.zeros(channels))
    feed_forward = AffineMap.identity(channels)
    return TemporalParams(points, levels, offset_head, logit_head,
                          value_map, output_map, feed_forward)


def temporal_forward_arrays(current: np.ndarray, warped: np.ndarray,
                            params: TemporalParams, keep_cache: bool = False):
    """Core temporal attention on raw arrays.

    current: (H, W, C); warped: (L, H, W, C) memory frames already in the
    current ego frame, oldest first, L <= params.levels. Returns
    (out (H, W, C), cache).
    """
    h, w, c = current.shape
    levels = warped.shape[0]
    require(1 <= levels <= params.levels, "memory level count exceeds configured levels")
    cells = current.reshape(h * w, c)
    p, n = params.points, params.levels

    off = (cells @ params.offset_head.weight.T + params.offset_head.bias)
    off = off.reshape(-1, p, n, 2)[:, :, :levels, :]
    logits = (cells @ params.logit_head.weight.T + params.logit_head.bias)
    logits = logits.reshape(-1, p, n)[:, :, :levels]
    attn = softmax_norm(logits.reshape(-1, p * levels), axis=-1).reshape(-1, p, levels)

    col = np.tile(np.arange(w, dtype=FLOAT), h)
    row = np.repeat(np.arange(h, dtype=FLOAT), w)
    u = col[:, None, None] + off[..., 0]
    v = row[:, None, None] + off[..., 1]

    samples = np.zeros((h * w, p, levels, c), dtype=FLOAT)
    valid = np.zeros((h * w, p, levels), dtype=bool)
    for li in range(levels):
        vals, ok = bilinear_many(warped[li], u[:, :, li], v[:, :, li])
        samples[:, :, li, :] = vals
        valid[:, :, li] = ok

    value = samples @ params.value_map.weight.T + params.value_map.bias
    attn_eff = attn * valid
    agg_v = np.einsum("hpl,hplc->hc", attn_eff, value)
    agg = agg_v @ params.output_map.weight.T + params.output_map.bias
    pre = cells + agg
    out = pre @ params.feed_forward.weight.T + params.feed_forward.bias

    cache = None
    if keep_cache:
        cache = {"cells": cells, "warped": warped, "attn": attn, "valid": valid,
                 "u": u, "v": v, "samples": samples, "value": value,
                 "agg_v": agg_v, "pre": pre, "levels": levels, "shape": (h, w, c)}
    return out.reshape(h, w, c), cache


def temporal_backward_arrays(cache: dict, params: TemporalParams, g_out: np.ndarray):
    """Gradients of sum(g_out * out) w.r.t. parameters and the current frame."""
    h, w, c = cache["shape"]
    levels = cache["levels"]
    p, n = params.points, params.levels
    g_out = np.asarray(g_out, dtype=FLOAT).reshape(h * w, c)
    cells, warped = cache["cells"], cache["warped"]
    attn, valid = cache["attn"], cache["valid"]
    samples, value = cache["samples"], cache["value"]

    g_wf = g_out.T @ cache["pre"]
    g_bf = g_out.sum(axis=0)
    g_pre = g_out @ params.feed_forward.weight

    g_wo = g_pre.T @ cache["agg_v"]
    g_bo = g_pre.sum(axis=0)
    g_aggv = g_pre @ params.output_map.weight

    attn_eff = attn * valid
    g_attn_eff = np.einsum("hc,hplc->hpl", g_aggv, value)
    g_value = attn_eff[..., None] * g_aggv[:, None, None, :]
    g_wv = np.einsum("hplc,hpld->cd", g_value, samples)
    g_bv = g_value.sum(axis=(0, 1, 2))
    g_samples = g_value @ params.value_map.weight

    g_off = np.zeros((h * w, p, n, 2), dtype=FLOAT)
    for li in range(levels):
        du, dv = bilinear_many_backward(warped[li], cache["u"][:, :, li], cache["v"][:, :, li],
                                        g_samples[:, :, li, :], None)
        g_off[:, :, li, 0] = du
        g_off[:, :, li, 1] = dv
    g_off_flat = g_off.reshape(h * w, p * n * 2)

    g_attn = g_attn_eff * valid
    g_logits_used = softmax_backward(attn.reshape(-1, p * levels),
                                     g_attn.reshape(-1, p * levels), axis=-1)
    g_logits = np.zeros((h * w, p, n), dtype=FLOAT)
    g_logits[:, :, :levels] = g_logits_used.reshape(-1, p, levels)
    g_logits_flat = g_logits.reshape(h * w, p * n)

    grads = {
        "offset_head.weight": g_off_flat.T @ cells,
        "offset_head.bias": g_off_flat.sum(axis=0),
        "logit_head.weight": g_logits_flat.T @ cells,
        "logit_head.bias": g_logits_flat.sum(axis=0),
        "value_map.weight": g_wv,
        "value_map.bias": g_bv,
        "output_map.weight": g_wo,
        "output_map.bias": g_bo,
        "feed_forward.weight": g_wf,
        "feed_forward.bias": g_bf,
    }
    g_current = (g_pre + g_off_flat @ params.offset_head.weight
                 + g_logits_flat @ params.logit_head.weight)
    return grads, g_current.reshape(h, w, c)


def warp_queue(queue: MemoryQueue, current_pose: Pose, reference: BEVGrid) -> np.ndarray:
    """Warp every queued frame into the current ego frame; (L, H, W, C)."""
    warped = []
    for bev, pose in queue.entries:
        require(_same_layout(bev, reference), "queued grid layout does not match current")
        warped.append(warp_bev(bev, relative_pose(current_pose, pose)).data)
    return np.stack(warped)


def temporal_attention(current: BEVGrid, queue: MemoryQueue, current_pose: Pose,
                       params: TemporalParams) -> BEVGrid:
    """Fuse queued history into the current BEV grid; identity on empty queue."""
    require(current.data.shape[2] == params.channels,
            "BEV channels do not match temporal params")
    if len(queue) == 0:
        return BEVGrid(current.data.copy(), current.pitch, current.origin)
    warped = warp_queue(queue, current_pose, current)
    out, _ = temporal_forward_arrays(current.data, warped, params)
    return BEVGrid(out, current.pitch, current.origin)
