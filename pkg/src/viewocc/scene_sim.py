"""Synthetic multi-camera scenes with analytic first-hit rendering.

A scene is a set of oriented boxes in a world frame (static walls and ground
slabs plus tracked dynamic boxes), a camera rig mounted on an ego body, a
per-frame ego trajectory, and a voxel grid fixed in the ego frame. Rendering
ray-casts each pixel by uniform stepping at pitch/4 against the analytic
elements (first hit wins) and emits a feature that depends only on the hit
point's world position and the hit element's class: a fixed orthogonal
per-class code plus a smooth sinusoidal position code. Two cameras observing
the same surface point therefore render near-identical features, and jointly
rotating scene content and rig about z reproduces the same feature maps,
which the rotational-invariance suite relies on.

Ground truth rasterizes the same analytic elements into the ego-frame grid
(center-in-element) and derives per-voxel flow from the tracked boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, require
from .flow_annotation import FlowField, GridSpec, TrackedBox, generate_flow_field
from .geometry import CameraModel, Pose, rotation_z
from .numerics import FLOAT, FeatureMap, as_float_array

RAY_STEP_FRACTION = 0.25  # step length as a fraction of the grid pitch


@dataclass
class SceneClass:
    id: int
    name: str
    foreground: bool = False

    def __post_init__(self):
        require(self.id >= 1, "class ids start at 1; 0 is reserved for free space")


@dataclass
class StaticElement:
    """Axis-oriented box fixed in the world frame."""

    category: int
    size: np.ndarray
    pose: Pose

    def __post_init__(self):
        self.size = as_float_array(self.size, shape=(3,), name="StaticElement.size")
        require(np.all(self.size > 0), "StaticElement.size must be positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points, dtype=FLOAT) - self.pose.translation) @ self.pose.rotation
        return np.all(np.abs(local) <= self.size / 2.0, axis=-1)


@dataclass
class SceneSpec:
    """Complete synthetic scene description; serializable to JSON."""

    name: str
    seed: int
    feature_channels: int
    classes: list
    grid: GridSpec
    cameras: list
    ego_trajectory: list
    frame_dt: float
    statics: list = dataclass_field(default_factory=list)
    boxes: list = dataclass_field(default_factory=list)
    feature_anchor: Pose = dataclass_field(default_factory=Pose.identity)

    def __post_init__(self):
        require(self.feature_channels >= max(1, len(self.classes)),
                "feature_channels must cover the class table")
        require(self.frame_dt > 0, "frame_dt must be positive")
        require(len(self.ego_trajectory) >= 1, "scene needs at least one frame")
        ids = [c.id for c in self.classes]
        require(len(set(ids)) == len(ids), "duplicate class ids")
        fg = {c.id for c in self.classes if c.foreground}
        for box in self.boxes:
            require(box.category in fg,
                    f"box track {box.track_id} category {box.category} is not a foreground class")
        for st in self.statics:
            require(st.category in set(ids), "static element category not in class table")
        self._basis = None

    @property
    def num_frames(self) -> int:
        return len(self.ego_trajectory)

    @property
    def class_ids(self):
        return [c.id for c in self.classes]

    @property
    def foreground_class_ids(self):
        return [c.id for c in self.classes if c.foreground]

    def basis(self) -> "_FeatureBasis":
        if self._basis is None:
            self._basis = _FeatureBasis(self.seed, self.feature_channels, len(self.classes))
        return self._basis

    def elements_in_frame(self, frame: int):
        """(element, class) membership callables in priority order, ego frame.

        Dynamic boxes precede statics, so a voxel inside both takes the box
        class. Returns list of (contains_fn, category, world_pose).
        """
        require(0 <= frame < self.num_frames, f"frame {frame} out of range")
        inv = self.ego_trajectory[frame].inverse()
        out = []
        for box in self.boxes:
            if frame in box.poses:
                pose = inv.compose(box.poses[frame])
                out.append((lambda pts, b=box, p=pose: b.contains(p, pts), box.category, pose))
        for st in self.statics:
            pose = inv.compose(st.pose)
            st_ego = StaticElement(st.category, st.size, pose)
            out.append((st_ego.contains, st.category, pose))
        return out

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "feature_channels": self.feature_channels,
            "frame_dt": self.frame_dt,
            "classes": [{"id": c.id, "name": c.name, "foreground": c.foreground}
                        for c in self.classes],
            "grid": self.grid.to_json(),
            "cameras": [cam.to_json() for cam in self.cameras],
            "ego_trajectory": [p.to_json() for p in self.ego_trajectory],
            "statics": [{"category": s.category, "size": [float(x) for x in s.size],
                         "pose": s.pose.to_json()} for s in self.statics],
            "boxes": [{"track_id": b.track_id, "category": b.category,
                       "size": [float(x) for x in b.size],
                       "poses": {str(f): p.to_json() for f, p in sorted(b.poses.items())}}
                      for b in self.boxes],
            "feature_anchor": self.feature_anchor.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSpec":
        try:
            return cls(
                name=obj.get("name", "scene"),
                seed=int(obj["seed"]),
                feature_channels=int(obj["feature_channels"]),
                classes=[SceneClass(int(c["id"]), c["name"], bool(c.get("foreground", False)))
                         for c in obj["classes"]],
                grid=GridSpec.from_json(obj["grid"]),
                cameras=[CameraModel.from_json(c) for c in obj["cameras"]],
                ego_trajectory=[Pose.from_json(p) for p in obj["ego_trajectory"]],
                frame_dt=float(obj["frame_dt"]),
                statics=[StaticElement(int(s["category"]), s["size"], Pose.from_json(s["pose"]))
                         for s in obj.get("statics", [])],
                boxes=[TrackedBox(int(b["track_id"]), int(b["category"]), b["size"],
                                  {int(f): Pose.from_json(p) for f, p in b["poses"].items()})
                       for b in obj.get("boxes", [])],
                feature_anchor=Pose.from_json(obj["feature_anchor"])
                if "feature_anchor" in obj else Pose.identity(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractViolation(f"malformed scene description: {exc}") from exc


def save_scene(path, scene: SceneSpec) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(scene.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_feature_channels(scene: SceneSpec, channels: int) -> SceneSpec:
    """Same scene rendered at a different feature width (fresh basis)."""
    obj = scene.to_json()
    obj["feature_channels"] = int(channels)
    return SceneSpec.from_json(obj)


def load_scene(path) -> SceneSpec:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ContractViolation(f"cannot read scene file {path}: {exc}") from exc
    return SceneSpec.from_json(obj)


class _FeatureBasis:
    """Deterministic surface-feature generator shared by all cameras.

    Class codes are rows of a seeded orthogonal matrix; the position code is
    a bank of low-frequency sinusoids of the anchor-frame position, smooth
    enough for bilinear sampling between neighboring pixels.
    """

    CLASS_AMP = 1.2
    POS_AMP = 0.8

    def __init__(self, seed: int, channels: int, n_classes: int):
        require(channels >= n_classes, "feature_channels must be >= number of classes")
        rng = np.random.default_rng([int(seed), 0x5EED])
        gauss = rng.normal(size=(channels, channels))
        q, _ = np.linalg.qr(gauss)
        self.class_codes = q[:n_classes] * self.CLASS_AMP
        dirs = rng.normal(size=(channels, 3))
        self.dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self.freqs = rng.uniform(0.6, 1.4, size=channels)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=channels)

    def features(self, class_indices: np.ndarray, anchor_points: np.ndarray) -> np.ndarray:
        """class_indices are 0-based rows; anchor_points (N, 3)."""
        pos = self.POS_AMP * np.sin(self.freqs * (anchor_points @ self.dirs.T) + self.phases)
        return self.class_codes[class_indices] + pos


def surface_feature(scene: SceneSpec, class_id: int, world_point) -> np.ndarray:
    """Feature emitted for a surface point of a given class (pre-sampling)."""
    ids = scene.class_ids
    require(class_id in ids, f"unknown class id {class_id}")
    anchor_pt = scene.feature_anchor.inverse().apply(as_float_array(world_point, shape=(3,)))
    return scene.basis().features(np.array([ids.index(class_id)]), anchor_pt[None, :])[0]


def _ray_grid(scene: SceneSpec, cam: CameraModel):
    """Camera origin and per-pixel unit directions in the ego frame."""
    inv = cam.extrinsics.inverse()
    origin = inv.translation
    us, vs = np.meshgrid(np.arange(cam.width, dtype=FLOAT),
                         np.arange(cam.height, dtype=FLOAT))
    d_cam = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)],
                     axis=-1)
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_ego = d_cam @ inv.rotation.T
    return origin, d_ego.reshape(-1, 3)


def _max_range(grid: GridSpec) -> float:
    z, h, w = grid.shape
    return float(np.linalg.norm([w * grid.pitch, h * grid.pitch, z * grid.pitch])) + 2.0


def _march(scene: SceneSpec, frame: int, cam: CameraModel):
    """First-hit march for every pixel.

    Returns (hit (P,), hit_points_ego (P, 3), hit_class_index (P,),
    steps_ego, before_hit_mask) where P = width*height in row-major pixel
    order, class indices are 0-based rows into the class table, and
    before_hit_mask flags the strictly-free step points for visibility.
    """
    elements = scene.elements_in_frame(frame)
    origin, dirs = _ray_grid(scene, cam)
    step = scene.grid.pitch * RAY_STEP_FRACTION
    n_steps = int(np.ceil(_max_range(scene.grid) / step))
    ts = (np.arange(n_steps, dtype=FLOAT) + 1.0) * step
    pts = origin[None, None, :] + ts[None, :, None] * dirs[:, None, :]

    flat = pts.reshape(-1, 3)
    inside_any = np.zeros(flat.shape[0], dtype=bool)
    for contains, _, _ in elements:
        inside_any |= contains(flat)
    inside_any = inside_any.reshape(pts.shape[0], n_steps)

    hit = inside_any.any(axis=1)
    first = np.where(hit, inside_any.argmax(axis=1), n_steps)
    hit_points = origin[None, :] + ts[np.minimum(first, n_steps - 1), None] * dirs
    hit_points = np.where(hit[:, None], hit_points, 0.0)

    class_idx = np.full(pts.shape[0], -1, dtype=np.int64)
    ids = scene.class_ids
    if hit.any():
        hp = hit_points[hit]
        owner = np.full(hp.shape[0], -1, dtype=np.int64)
        for contains, category, _ in reversed(elements):
            inside = contains(hp)
            owner[inside] = ids.index(category)
        class_idx[hit] = owner

    before_hit = np.arange(n_steps)[None, :] < first[:, None]
    return hit, hit_points, class_idx, pts, before_hit


def render_camera_features(scene: SceneSpec, frame: int, cam_index: int) -> FeatureMap:
    """Render one camera's feature image for a frame; misses are zero."""
    require(0 <= cam_index < len(scene.cameras), "camera index out of range")
    cam = scene.cameras[cam_index]
    hit, hit_points, class_idx, _, _ = _march(scene, frame, cam)
    data = np.zeros((cam.height * cam.width, scene.feature_channels), dtype=FLOAT)
    if hit.any():
        ego_pose = scene.ego_trajectory[frame]
        world_pts = ego_pose.apply(hit_points[hit])
        anchor_pts = scene.feature_anchor.inverse().apply(world_pts)
        data[hit] = scene.basis().features(class_idx[hit], anchor_pts)
    return FeatureMap(data.reshape(cam.height, cam.width, scene.feature_channels))


def render_all_cameras(scene: SceneSpec, frame: int):
    return [render_camera_features(scene, frame, j) for j in range(len(scene.cameras))]


def ray_visibility(scene: SceneSpec, frame: int) -> np.ndarray:
    """(Z, H, W) mask of voxels observed by any camera: traversed-free or hit."""
    grid = scene.grid
    z, h, w = grid.shape
    observed = np.zeros((z, h, w), dtype=bool)
    for cam in scene.cameras:
        hit, hit_points, _, pts, before_hit = _march(scene, frame, cam)
        free_pts = pts[before_hit]
        mark = free_pts if not hit.any() else np.concatenate([free_pts, hit_points[hit]])
        idx = np.floor((mark - grid.origin[None, :]) / grid.pitch).astype(np.int64)
        ok = ((idx[:, 0] >= 0) & (idx[:, 0] < w) & (idx[:, 1] >= 0) & (idx[:, 1] < h)
              & (idx[:, 2] >= 0) & (idx[:, 2] < z))
        idx = idx[ok]
        observed[idx[:, 2], idx[:, 1], idx[:, 0]] = True
    return observed


def scene_ground_truth(scene: SceneSpec, frame: int, flow_mode: str = "occupancy-flow"):
    """(labels, FlowField) on the ego-frame grid at `frame`.

    Labels: 0 = free, otherwise the class id of the occupying element, with
    dynamic boxes taking priority over statics and overlapping boxes resolved
    by the flow field's nearest-center rule. Flow lives on box voxels; frame 0
    has no predecessor so all flow is zero there.
    """
    grid = scene.grid
    centers = grid.voxel_centers().reshape(-1, 3)
    labels = np.zeros(centers.shape[0], dtype=np.int64)
    inv = scene.ego_trajectory[frame].inverse()
    for st in reversed(scene.statics):
        ego_el = StaticElement(st.category, st.size, inv.compose(st.pose))
        labels[ego_el.contains(centers)] = st.category
    labels = labels.reshape(grid.shape)

    ego_boxes = []
    for box in scene.boxes:
        poses = {}
        if frame in box.poses:
            poses[frame] = inv.compose(box.poses[frame])
            if frame - 1 in box.poses:
                poses[frame - 1] = inv.compose(box.poses[frame - 1])
            ego_boxes.append(TrackedBox(box.track_id, box.category, box.size, poses))
    flow = generate_flow_field(ego_boxes, frame, grid, scene.frame_dt, mode=flow_mode)
    labels[flow.occupied] = flow.category[flow.occupied]
    if not flow.foreground_classes:
        flow = FlowField(grid=grid, flow=flow.flow, occupied=flow.occupied,
                         category=flow.category,
                         foreground_classes=tuple(scene.foreground_class_ids))
    return labels, flow


def rotated_about_z(scene: SceneSpec, alpha: float) -> SceneSpec:
    """Jointly rotate scene content and rig by alpha about the ego z-axis.

    Content poses are left-composed with the rotation, the feature anchor
    rotates with the content (so surface features follow it), and camera
    extrinsics are right-composed with the inverse rotation. Requires an
    identity ego trajectory; rendered images are then identical up to
    floating-point roundoff while every ego-frame direction turns by alpha.
    """
    for pose in scene.ego_trajectory:
        require(np.allclose(pose.rotation, np.eye(3), atol=1e-15)
                and np.allclose(pose.translation, 0.0, atol=1e-15),
                "rotated_about_z requires an identity ego trajectory")
    rot = Pose.from_z_rotation(alpha)
    rot_inv = rot.inverse()
    return SceneSpec(
        name=f"{scene.name}@rot{alpha:.3f}",
        seed=scene.seed,
        feature_channels=scene.feature_channels,
        classes=list(scene.classes),
        grid=scene.grid,
        cameras=[CameraModel(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                             cam.extrinsics.compose(rot_inv), cam.name)
                 for cam in scene.cameras],
        ego_trajectory=list(scene.ego_trajectory),
        frame_dt=scene.frame_dt,
        statics=[StaticElement(s.category, s.size, rot.compose(s.pose)) for s in scene.statics],
        boxes=[TrackedBox(b.track_id, b.category, b.size,
                          {f: rot.compose(p) for f, p in b.poses.items()})
               for b in scene.boxes],
        feature_anchor=rot.compose(scene.feature_anchor),
    )


# ---------------------------------------------------------------------------
# rigs and scene presets


def build_rig(kind: str = "surround6", fov_deg: float = 55.0, width: int = 48,
              height: int = 36, mount_height: float = 1.5):
    """Camera rigs: mono1 (one forward camera), stereo2 (forward pair),
    surround6 (60-degree yaw increments)."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    fx = cx / np.tan(np.radians(fov_deg) / 2.0)
    axes = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

    def camera(yaw: float, position, name: str) -> CameraModel:
        rot = axes @ rotation_z(yaw).T
        trans = -rot @ np.asarray(position, dtype=FLOAT)
        return CameraModel(fx=fx, fy=fx, cx=cx, cy=cy, width=width, height=height,
                           extrinsics=Pose(rot, trans), name=name)

    if kind == "mono1":
        return [camera(0.0, (0.0, 0.0, mount_height), "front")]
    if kind == "stereo2":
        return [camera(0.0, (0.0, 0.3, mount_height), "left"),
                camera(0.0, (0.0, -0.3, mount_height), "right")]
    if kind == "surround6":
        # Cameras sit on a 0.4 m ring, each displaced along its own viewing
        # direction, so neighbouring views have a real baseline between them.
        ring = 0.4
        return [camera(np.radians(60.0 * i),
                       (ring * np.cos(np.radians(60.0 * i)),
                        ring * np.sin(np.radians(60.0 * i)),
                        mount_height), f"cam{i}")
                for i in range(6)]
    raise ContractViolation(f"unknown rig kind {kind!r}")


_DEFAULT_CLASSES = [
    SceneClass(1, "ground", foreground=False),
    SceneClass(2, "wall", foreground=False),
    SceneClass(3, "mover", foreground=True),
]


def _desk_grid(cells: int = 20, z_cells: int = 4, pitch: float = 0.4) -> GridSpec:
    half = cells * pitch / 2.0
    return GridSpec((z_cells, cells, cells), pitch, (-half, -half, -0.4))


def _ground(extent_x: float = 7.9, extent_y: float = 7.9) -> StaticElement:
    return StaticElement(1, (extent_x, extent_y, 0.38),
                         Pose(np.eye(3), (0.03, -0.05, -0.19)))


def _wall(x: float, y: float, yaw: float, length: float, height: float = 1.1) -> StaticElement:
    return StaticElement(2, (length, 0.24, height),
                         Pose.from_z_rotation(yaw, (x, y, height / 2.0)))


def preset_scene(name: str, seed: int = 7) -> SceneSpec:
    """Named scene presets used by the verification harness and the CLI."""
    if name == "training":
        return _training_scene(seed)
    if name == "boundary":
        return _boundary_scene(seed)
    if name == "rotation":
        return _rotation_scene(seed)
    if name == "stream":
        return _stream_scene(seed)
    raise ContractViolation(f"unknown scene preset {name!r}")


def _training_scene(seed: int) -> SceneSpec:
    """Three-frame desk scene with content concentrated at frustum boundaries.

    The surround rig uses a 55-degree fov on 60-degree spacing, leaving thin
    azimuth wedges that no camera sees. Every wall runs tangentially across a
    wedge and both movers cross one, so image evidence near the boundaries
    rewards strategies that can draw on the neighboring camera.
    """
    frames = 3
    dt = 0.5
    ego = [Pose.from_z_rotation(0.03 * f, (0.12 * f, 0.05 * f, 0.0)) for f in range(frames)]
    boxes = []
    # mover A tracks the gap between cam0 and cam1 (ego azimuth near 30 deg)
    poses_a = {}
    for f in range(frames):
        az = np.radians(27.0 + 3.0 * f)
        local = np.array([2.8 * np.cos(az), 2.8 * np.sin(az), 0.42])
        poses_a[f] = ego[f].compose(Pose.from_z_rotation(az + 0.2, local))
    boxes.append(TrackedBox(1, 3, (0.9, 0.7, 0.84), poses_a))
    # mover B turns while crossing the cam4/cam5 gap (azimuth near -90 deg)
    poses_b = {}
    for f in range(frames):
        yaw = 0.65 * f * dt
        poses_b[f] = Pose.from_z_rotation(yaw, (0.25 * (f - 1), -2.65, 0.36))
    boxes.append(TrackedBox(2, 3, (1.15, 0.6, 0.72), poses_b))
    # mover C sweeps across the cam2/cam3 gap (azimuth near 150 deg)
    poses_c = {}
    for f in range(frames):
        az = np.radians(147.0 + 3.0 * f)
        local = np.array([2.6 * np.cos(az), 2.6 * np.sin(az), 0.45])
        poses_c[f] = ego[f].compose(Pose.from_z_rotation(az - 0.3, local))
    boxes.append(TrackedBox(3, 3, (1.0, 0.8, 0.9), poses_c))
    # three long walls, each running tangentially across a frustum gap
    walls = []
    for r, az_deg, skew, length in ((3.15, 30.0, 2.0, 2.6),
                                    (3.05, 90.0, 3.0, 2.4),
                                    (2.9, -150.0, -1.0, 2.6)):
        az = np.radians(az_deg)
        yaw = az + np.pi / 2.0 + np.radians(skew)
        walls.append(_wall(r * np.cos(az), r * np.sin(az), yaw, length))
    return SceneSpec(
        name="training", seed=seed, feature_channels=16, classes=list(_DEFAULT_CLASSES),
        grid=_desk_grid(), cameras=build_rig("surround6", fov_deg=55.0),
        ego_trajectory=ego, frame_dt=dt,
        statics=[_ground()] + walls,
        boxes=boxes,
    )


def _boundary_scene(seed: int) -> SceneSpec:
    """Two-frame scene for the cross-camera reach suite: 70-degree fov rig,
    content straddling the cam0/cam1 frustum boundary."""
    frames = 2
    ego = [Pose.identity() for _ in range(frames)]
    poses = {f: Pose.from_z_rotation(0.4, (2.95 * np.cos(np.radians(20.0)),
                                           2.95 * np.sin(np.radians(20.0)) + 0.12 * f, 0.38))
             for f in range(frames)}
    return SceneSpec(
        name="boundary", seed=seed, feature_channels=16, classes=list(_DEFAULT_CLASSES),
        grid=_desk_grid(), cameras=build_rig("surround6", fov_deg=70.0),
        ego_trajectory=ego, frame_dt=0.5,
        statics=[_ground(),
                 _wall(3.2 * np.cos(np.radians(30.0)), 3.2 * np.sin(np.radians(30.0)),
                       np.radians(120.0), 3.4),
                 _wall(3.3 * np.cos(np.radians(-5.0)), 3.3 * np.sin(np.radians(-5.0)),
                       np.radians(85.0), 2.8)],
        boxes=[TrackedBox(1, 3, (0.9, 0.7, 0.76), poses)],
    )


def _rotation_scene(seed: int) -> SceneSpec:
    """Single-frame identity-ego scene for the rotational-invariance suite."""
    return SceneSpec(
        name="rotation", seed=seed, feature_channels=12, classes=list(_DEFAULT_CLASSES),
        grid=GridSpec((4, 16, 16), 0.4, (-3.2, -3.2, -0.4)),
        cameras=build_rig("surround6", fov_deg=70.0),
        ego_trajectory=[Pose.identity()], frame_dt=0.5,
        statics=[_ground(6.2, 6.2),
                 _wall(2.45, 0.7, 0.55, 2.3),
                 _wall(-1.1, 2.3, -0.4, 1.9),
                 _wall(-2.2, -1.3, 1.05, 2.1)],
        boxes=[TrackedBox(1, 3, (0.8, 0.6, 0.7),
                          {0: Pose.from_z_rotation(0.9, (1.3, -1.7, 0.33))})],
    )


def _stream_scene(seed: int) -> SceneSpec:
    """Static world, ego translating one grid pitch per frame, twelve frames."""
    frames = 12
    ego = [Pose.from_z_rotation(0.0, (0.4 * f, 0.0, 0.0)) for f in range(frames)]
    return SceneSpec(
        name="stream", seed=seed, feature_channels=16, classes=list(_DEFAULT_CLASSES),
        grid=_desk_grid(), cameras=build_rig("surround6", fov_deg=55.0),
        ego_trajectory=ego, frame_dt=0.5,
        statics=[StaticElement(1, (16.0, 7.9, 0.38), Pose(np.eye(3), (2.4, 0.0, -0.19))),
                 _wall(1.7, 2.6, 0.12, 2.8),
                 _wall(3.9, -2.2, -0.9, 2.5),
                 _wall(6.3, 1.4, 0.7, 2.6)],
        boxes=[TrackedBox(1, 3, (0.9, 0.7, 0.7),
                          {f: Pose.from_z_rotation(0.25 * f, (1.6 + 0.3 * f, -1.2, 0.35))
                           for f in range(frames)})],
    )
