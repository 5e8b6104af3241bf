"""Occupancy network: voxel queries, multi-view attention, temporal fusion.

The per-frame pipeline is

    query table (learned, one entry per voxel)
      -> residual multi-view attention layers over the camera features
      -> squeeze to a BEV grid
      -> temporal attention against the warped memory queue (residual + ffn)
      -> unsqueeze back to voxels
      -> occupancy / semantic heads on voxels, flow head on the fused BEV

Everything is plain float64 numpy with hand-written backward passes; the
parameter set walks as a flat dict of dotted names so the optimizer, the
serializer, and the finite-difference checks all share one view of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blobio
from .errors import ContractViolation, require
from .flow_annotation import GridSpec
from .geometry import Pose
from .numerics import FLOAT, AffineMap
from .objective import PredictionBundle
from .temporal_stream import (BEVGrid, MemoryQueue, TemporalParams, VoxelGrid,
                              init_temporal_params, squeeze_bev, temporal_backward_arrays,
                              temporal_forward_arrays, unsqueeze_voxel, warp_queue)
from .view_attention import (ProjFirstParams, ViewAttnParams, attn_backward_batch,
                             attn_forward_batch, init_proj_first_params,
                             init_view_attn_params, proj_first_backward_batch,
                             proj_first_forward_batch)

METHODS = ("view-attn", "proj-first")
MODES = ("one-dof", "two-dof", "ego")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; geometry must match the scene's grid."""

    grid_shape: tuple
    pitch: float
    origin: tuple
    voxel_channels: int
    bev_channels: int
    n_classes: int
    layers: int = 2
    heads: int = 4
    points: int = 4
    queue_len: int = 4
    temporal_points: int = 4
    method: str = "view-attn"
    mode: str = "one-dof"
    star_radius: float = 0.5
    star_radius_px: float = 3.0
    star_radius_cells: float = 0.9

    def __post_init__(self):
        self.grid_shape = tuple(int(x) for x in self.grid_shape)
        self.origin = tuple(float(x) for x in self.origin)
        require(len(self.grid_shape) == 3 and len(self.origin) == 3, "grid needs 3-d shape/origin")
        require(self.method in METHODS, f"method must be one of {METHODS}")
        require(self.mode in MODES, f"mode must be one of {MODES}")
        require(self.voxel_channels % self.heads == 0,
                "voxel_channels must be divisible by heads")
        require(self.layers >= 1 and self.queue_len >= 1, "layers and queue_len must be >= 1")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_shape, self.pitch, self.origin)

    @property
    def n_voxels(self) -> int:
        z, h, w = self.grid_shape
        return z * h * w

    def to_json(self) -> dict:
        return {
            "grid_shape": list(self.grid_shape), "pitch": self.pitch,
            "origin": list(self.origin), "voxel_channels": self.voxel_channels,
            "bev_channels": self.bev_channels, "n_classes": self.n_classes,
            "layers": self.layers, "heads": self.heads, "points": self.points,
            "queue_len": self.queue_len, "temporal_points": self.temporal_points,
            "method": self.method, "mode": self.mode,
            "star_radius": self.star_radius, "star_radius_px": self.star_radius_px,
            "star_radius_cells": self.star_radius_cells,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        try:
            return cls(**{k: obj[k] for k in (
                "grid_shape", "pitch", "origin", "voxel_channels", "bev_channels",
                "n_classes", "layers", "heads", "points", "queue_len", "temporal_points",
                "method", "mode", "star_radius", "star_radius_px", "star_radius_cells",
            ) if k in obj})
        except (KeyError, TypeError) as exc:
            raise ContractViolation(f"malformed model config: {exc}") from exc


@dataclass
class ModelParams:
    config: ModelConfig
    query_table: np.ndarray
    layers: list
    squeeze: AffineMap
    temporal: TemporalParams
    expand: AffineMap
    occ_head: AffineMap
    sem_head: AffineMap
    flow_head: AffineMap

    def arrays(self):
        """Flat (dotted-name, ndarray) walk; arrays are live references."""
        yield "query_table", self.query_table
        for i, layer in enumerate(self.layers):
            yield from layer.arrays(prefix=f"layers.{i}.")
        yield "squeeze.weight", self.squeeze.weight
        yield "squeeze.bias", self.squeeze.bias
        yield from self.temporal.arrays(prefix="temporal.")
        yield "expand.weight", self.expand.weight
        yield "expand.bias", self.expand.bias
        for name in ("occ_head", "sem_head", "flow_head"):
            m = getattr(self, name)
            yield f"{name}.weight", m.weight
            yield f"{name}.bias", m.bias

    def as_dict(self) -> dict:
        return dict(self.arrays())

    def n_parameters(self) -> int:
        return int(sum(a.size for _, a in self.arrays()))


def init_model(rng: np.random.Generator, config: ModelConfig, n_cameras: int) -> ModelParams:
    c, cb = config.voxel_channels, config.bev_channels
    z = config.grid_shape[0]
    query_table = rng.normal(0.0, 0.3, (config.n_voxels, c))
    layers = []
    for _ in range(config.layers):
        if config.method == "view-attn":
            layers.append(init_view_attn_params(rng, c, heads=config.heads,
                                                points=config.points, cameras=n_cameras,
                                                star_radius=config.star_radius))
        else:
            layers.append(init_proj_first_params(rng, c, heads=config.heads,
                                                 points=config.points, cameras=n_cameras,
                                                 star_radius_px=config.star_radius_px))
    squeeze = AffineMap(rng.normal(0.0, 1.0 / np.sqrt(z * c), (cb, z * c)), np.zeros(cb))
    temporal = init_temporal_params(rng, cb, points=config.temporal_points,
                                    levels=config.queue_len,
                                    star_radius_cells=config.star_radius_cells)
    expand = AffineMap(rng.normal(0.0, 1.0 / np.sqrt(cb), (z * c, cb)), np.zeros(z * c))
    occ_head = AffineMap(rng.normal(0.0, 1.0 / np.sqrt(c), (1, c)), np.zeros(1))
    sem_head = AffineMap(rng.normal(0.0, 1.0 / np.sqrt(c), (config.n_classes, c)),
                         np.zeros(config.n_classes))
    flow_head = AffineMap(rng.normal(0.0, 1.0 / np.sqrt(cb), (2, cb)), np.zeros(2))
    return ModelParams(config, query_table, layers, squeeze, temporal, expand,
                       occ_head, sem_head, flow_head)


def save_params(prefix, params: ModelParams) -> None:
    blobio.write_blob(prefix, params.as_dict(), {"config": params.config.to_json()})


def load_params(prefix) -> ModelParams:
    arrays, meta = blobio.read_blob(prefix)
    config = ModelConfig.from_json(meta["config"])
    n_cameras = arrays["layers.0.logit_head.weight"].shape[0] // (config.heads * config.points)
    params = init_model(np.random.default_rng(0), config, n_cameras)
    for name, target in params.arrays():
        if name not in arrays:
            raise ContractViolation(f"parameter blob is missing array {name!r}")
        require(arrays[name].shape == target.shape,
                f"parameter {name!r} has shape {arrays[name].shape}, expected {target.shape}")
        np.copyto(target, arrays[name])
    return params


@dataclass
class FrameResult:
    """Forward products of one frame; caches present only when requested."""

    pred: PredictionBundle
    fused: BEVGrid
    voxel_features: np.ndarray
    caches: dict | None = None


def forward_frame(params: ModelParams, features, rig, pose: Pose, queue: MemoryQueue,
                  keep_cache: bool = False) -> FrameResult:
    """Run the pipeline for one frame. The memory queue is read, not written;
    callers push the fused grid themselves so streaming stays explicit."""
    cfg = params.config
    z, h, w = cfg.grid_shape
    centers = cfg.grid.voxel_centers().reshape(-1, 3)

    forward = attn_forward_batch if cfg.method == "view-attn" else proj_first_forward_batch
    v = params.query_table
    layer_caches = []
    for layer in params.layers:
        if cfg.method == "view-attn":
            out, cache = forward(v, centers, layer, features, rig, cfg.mode,
                                 keep_cache=keep_cache)
        else:
            out, cache = forward(v, centers, layer, features, rig, keep_cache=keep_cache)
        v = v + out
        layer_caches.append(cache)

    vox = VoxelGrid(np.ascontiguousarray(v.reshape(z, h, w, cfg.voxel_channels)),
                    cfg.pitch, cfg.origin)
    bev = squeeze_bev(vox, params.squeeze)

    t_cache = None
    if len(queue) > 0:
        warped = warp_queue(queue, pose, bev)
        fused_data, t_cache = temporal_forward_arrays(bev.data, warped, params.temporal,
                                                      keep_cache=keep_cache)
    else:
        fused_data = bev.data.copy()
    fused = BEVGrid(fused_data, bev.pitch, bev.origin)

    vox_out = unsqueeze_voxel(fused, params.expand, z, cfg.origin[2])
    feats = vox_out.data
    occ_logits = feats @ params.occ_head.weight[0] + params.occ_head.bias[0]
    sem_logits = feats @ params.sem_head.weight.T + params.sem_head.bias
    bev_flow = fused.data @ params.flow_head.weight.T + params.flow_head.bias

    caches = None
    if keep_cache:
        squeeze_columns = vox.data.transpose(1, 2, 0, 3).reshape(h * w, z * cfg.voxel_channels)
        caches = {"layers": layer_caches, "temporal": t_cache,
                  "squeeze_columns": squeeze_columns, "fused": fused,
                  "voxel_features": feats}
    pred = PredictionBundle(occ_logits, sem_logits, bev_flow)
    return FrameResult(pred, fused, feats, caches)


def zero_grads(params: ModelParams) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.arrays()}


def backward_frame(params: ModelParams, result: FrameResult, features, rig,
                   loss_grads: dict) -> dict:
    """Backpropagate loss gradients through one cached frame.

    loss_grads carries occ_logits (Z,H,W), sem_logits (Z,H,W,n_classes), and
    bev_flow (H,W,2). Returns a complete gradient dict over params.arrays();
    entries untouched by this frame (an empty memory queue leaves the temporal
    block unused) stay zero.
    """
    require(result.caches is not None, "backward_frame needs a forward run with keep_cache")
    cfg = params.config
    z, h, w = cfg.grid_shape
    grads = zero_grads(params)
    caches = result.caches
    feats = caches["voxel_features"]
    fused = caches["fused"]

    g_occ = np.asarray(loss_grads["occ_logits"], dtype=FLOAT)
    g_sem = np.asarray(loss_grads["sem_logits"], dtype=FLOAT)
    g_flow = np.asarray(loss_grads["bev_flow"], dtype=FLOAT)

    grads["occ_head.weight"][0] = np.einsum("zhw,zhwc->c", g_occ, feats)
    grads["occ_head.bias"][0] = g_occ.sum()
    grads["sem_head.weight"][:] = np.einsum("zhwk,zhwc->kc", g_sem, feats)
    grads["sem_head.bias"][:] = g_sem.sum(axis=(0, 1, 2))
    grads["flow_head.weight"][:] = np.einsum("hwf,hwc->fc", g_flow, fused.data)
    grads["flow_head.bias"][:] = g_flow.sum(axis=(0, 1))

    g_feats = (g_occ[..., None] * params.occ_head.weight[0]
               + np.einsum("zhwk,kc->zhwc", g_sem, params.sem_head.weight))
    g_fused = g_flow @ params.flow_head.weight

    # unsqueeze: fused (H,W,Cb) -> out -> reshape(h,w,z,c) -> transpose(2,0,1,3)
    g_expand_out = g_feats.transpose(1, 2, 0, 3).reshape(h * w, z * cfg.voxel_channels)
    fused_flat = fused.data.reshape(h * w, cfg.bev_channels)
    grads["expand.weight"][:] = g_expand_out.T @ fused_flat
    grads["expand.bias"][:] = g_expand_out.sum(axis=0)
    g_fused = g_fused + (g_expand_out @ params.expand.weight).reshape(h, w, cfg.bev_channels)

    if caches["temporal"] is not None:
        t_grads, g_bev = temporal_backward_arrays(caches["temporal"], params.temporal, g_fused)
        for name, arr in t_grads.items():
            grads[f"temporal.{name}"][:] = arr
    else:
        g_bev = g_fused

    # squeeze: columns (H,W,Z*C) @ W.T + b
    g_bev_flat = g_bev.reshape(h * w, cfg.bev_channels)
    columns = caches["squeeze_columns"]
    grads["squeeze.weight"][:] = g_bev_flat.T @ columns
    grads["squeeze.bias"][:] = g_bev_flat.sum(axis=0)
    g_columns = g_bev_flat @ params.squeeze.weight
    g_vox = g_columns.reshape(h, w, z, cfg.voxel_channels).transpose(2, 0, 1, 3)
    g_v = g_vox.reshape(-1, cfg.voxel_channels)

    backward = attn_backward_batch if cfg.method == "view-attn" else proj_first_backward_batch
    for i in reversed(range(len(params.layers))):
        layer_grads, g_queries, _ = backward(caches["layers"][i], params.layers[i],
                                             features, rig, g_v)
        for name, arr in layer_grads.items():
            grads[f"layers.{i}.{name}"][:] = arr
        g_v = g_v + g_queries

    grads["query_table"][:] = g_v
    return grads


class MomentumSGD:
    """Classic momentum: v <- mu v + g; theta <- theta - lr v."""

    def __init__(self, lr: float, momentum: float = 0.9):
        require(lr > 0, "learning rate must be positive")
        require(0.0 <= momentum < 1.0, "momentum must be in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params: ModelParams, grads: dict) -> None:
        for name, arr in params.arrays():
            g = grads.get(name)
            require(g is not None, f"missing gradient for {name!r}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(arr)
                self.velocity[name] = v
            v *= self.momentum
            v += g
            arr -= self.lr * v
