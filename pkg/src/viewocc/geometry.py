"""Rigid poses, pinhole cameras, and the view-coordinate sampling frame.

Frames are right-handed with z up. A Pose stores a rotation matrix and a
translation and maps points from its source frame into its target frame as
`R @ p + t`. Camera extrinsics map ego-frame points into camera frame
(OpenCV axes: x right, y down, z forward); pixel coordinates follow the
sampling convention of `numerics` (u along width, v along height), and a
projection is in view iff depth > 0 and the pixel lands inside
[0, width-1] x [0, height-1].

The view-coordinate frame attaches to a reference point p: its azimuth
theta = arctan2(y, x) (zero at the origin) and altitude
phi = arctan2(z, hypot(x, y)) rotate learned offsets so that the offset
x-axis points along the view ray. Offsets rotated this way track the scene
under rotations about z, which is what the rotational-invariance suite
exercises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, require
from .numerics import FLOAT, as_float_array

ROTATION_TOL = 1e-9


def _check_rotation(rot: np.ndarray) -> None:
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise ContractViolation(f"rotation is not orthonormal (max deviation {err:.3e})")
    if np.linalg.det(rot) < 0.0:
        raise ContractViolation("rotation has negative determinant (reflection)")


@dataclass
class Pose:
    """Rigid transform p_target = rotation @ p_source + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = as_float_array(self.rotation, shape=(3, 3), name="Pose.rotation")
        self.translation = as_float_array(self.translation, shape=(3,), name="Pose.translation")
        _check_rotation(self.rotation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_z_rotation(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(rotation_z(yaw), np.asarray(translation, dtype=FLOAT))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=FLOAT)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rot_t = self.rotation.T
        return Pose(rot_t, -rot_t @ self.translation)

    def to_json(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pose":
        rot = as_float_array(obj["rotation"], name="Pose.rotation").reshape(3, 3)
        return cls(rot, obj["translation"])


def relative_pose(current: Pose, previous: Pose) -> Pose:
    """Transform mapping previous-frame coordinates into the current frame.

    Both arguments are poses of the same rig in a shared world frame; the
    result is current^-1 composed with previous.
    """
    return current.inverse().compose(previous)


def rotation_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], dtype=FLOAT)


def altitude_rotation(phi: float) -> np.ndarray:
    """Rotation about y that lifts the x-axis toward +z by phi."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]], dtype=FLOAT)


def view_angle(p) -> float:
    """Azimuth of p in (-pi, pi]; the origin maps to 0."""
    p = np.asarray(p, dtype=FLOAT)
    theta = float(np.arctan2(p[..., 1], p[..., 0]))
    if theta <= -np.pi:
        theta = np.pi
    return theta


def altitude_angle(p) -> float:
    """Altitude of p in [-pi/2, pi/2]; zero anywhere on the z = 0 plane except poles."""
    p = np.asarray(p, dtype=FLOAT)
    return float(np.arctan2(p[..., 2], np.hypot(p[..., 0], p[..., 1])))


@dataclass
class ViewFrame:
    """Azimuth/altitude frame anchored at a reference point."""

    theta: float
    phi: float
    origin: np.ndarray

    def __post_init__(self):
        self.origin = as_float_array(self.origin, shape=(3,), name="ViewFrame.origin")
        require(-np.pi < self.theta <= np.pi, "ViewFrame.theta outside (-pi, pi]")
        require(-np.pi / 2 <= self.phi <= np.pi / 2, "ViewFrame.phi outside [-pi/2, pi/2]")


def view_frame(p) -> ViewFrame:
    p = as_float_array(p, shape=(3,), name="p")
    return ViewFrame(theta=view_angle(p), phi=altitude_angle(p), origin=p)


def vc_sample_point(p, dp, mode: str = "one-dof") -> np.ndarray:
    """Offset a reference point inside its view-coordinate frame.

    one-dof rotates the offset by the azimuth only (z-component of dp is
    preserved exactly); two-dof also applies the altitude rotation so the
    offset x-axis follows the full 3-d view ray.
    """
    p = as_float_array(p, shape=(3,), name="p")
    dp = as_float_array(dp, shape=(3,), name="dp")
    rot = view_rotation(p, mode)
    return p + rot @ dp


def view_rotation(p, mode: str) -> np.ndarray:
    """Rotation applied to offsets at reference point p for the given mode."""
    if mode == "one-dof":
        return rotation_z(view_angle(p))
    if mode == "two-dof":
        return rotation_z(view_angle(p)) @ altitude_rotation(altitude_angle(p))
    if mode == "ego":
        return np.eye(3, dtype=FLOAT)
    raise ContractViolation(f"unknown view-coordinate mode: {mode!r}")


def view_rotations(points: np.ndarray, mode: str) -> np.ndarray:
    """Batched view_rotation for points of shape (N, 3); returns (N, 3, 3)."""
    pts = np.asarray(points, dtype=FLOAT)
    n = pts.shape[0]
    if mode == "ego":
        return np.broadcast_to(np.eye(3, dtype=FLOAT), (n, 3, 3)).copy()
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    ct, st = np.cos(theta), np.sin(theta)
    rz = np.zeros((n, 3, 3), dtype=FLOAT)
    rz[:, 0, 0] = ct
    rz[:, 0, 1] = -st
    rz[:, 1, 0] = st
    rz[:, 1, 1] = ct
    rz[:, 2, 2] = 1.0
    if mode == "one-dof":
        return rz
    if mode == "two-dof":
        phi = np.arctan2(pts[:, 2], np.hypot(pts[:, 0], pts[:, 1]))
        cp, sp = np.cos(phi), np.sin(phi)
        ry = np.zeros((n, 3, 3), dtype=FLOAT)
        ry[:, 0, 0] = cp
        ry[:, 0, 2] = -sp
        ry[:, 1, 1] = 1.0
        ry[:, 2, 0] = sp
        ry[:, 2, 2] = cp
        return rz @ ry
    raise ContractViolation(f"unknown view-coordinate mode: {mode!r}")


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics, image size, and camera-from-ego extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: Pose
    name: str = ""

    def __post_init__(self):
        require(self.fx > 0 and self.fy > 0, "CameraModel: focal lengths must be positive")
        require(self.width >= 2 and self.height >= 2, "CameraModel: image must be at least 2x2")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
            "image_size": [self.width, self.height],
            "extrinsics": self.extrinsics.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CameraModel":
        k = obj["intrinsics"]
        return cls(fx=float(k["fx"]), fy=float(k["fy"]), cx=float(k["cx"]), cy=float(k["cy"]),
                   width=int(obj["image_size"][0]), height=int(obj["image_size"][1]),
                   extrinsics=Pose.from_json(obj["extrinsics"]), name=obj.get("name", ""))


_DEPTH_EPS = 1e-12


def project_points(cam: CameraModel, points: np.ndarray):
    """Project ego-frame points (..., 3) through a camera.

    Returns (uv, depth, in_view). Behind-camera points report in_view False
    with uv pinned to zero; in-view requires depth > 0 and the pixel inside
    [0, width-1] x [0, height-1] (the bilinear validity box).
    """
    pts = np.asarray(points, dtype=FLOAT)
    q = cam.extrinsics.apply(pts)
    depth = q[..., 2]
    safe = depth > _DEPTH_EPS
    zdiv = np.where(safe, depth, 1.0)
    u = cam.fx * q[..., 0] / zdiv + cam.cx
    v = cam.fy * q[..., 1] / zdiv + cam.cy
    in_view = (safe & (u >= 0.0) & (u <= cam.width - 1.0)
               & (v >= 0.0) & (v <= cam.height - 1.0))
    u = np.where(safe, u, 0.0)
    v = np.where(safe, v, 0.0)
    uv = np.stack([u, v], axis=-1)
    return uv, depth, in_view


def project_jacobian(cam: CameraModel, points: np.ndarray) -> np.ndarray:
    """d(uv)/d(point) for ego-frame points (..., 3); returns (..., 2, 3).

    Only meaningful where depth > 0; behind-camera rows are zero.
    """
    pts = np.asarray(points, dtype=FLOAT)
    q = cam.extrinsics.apply(pts)
    depth = q[..., 2]
    safe = depth > _DEPTH_EPS
    z = np.where(safe, depth, 1.0)
    jac_cam = np.zeros(pts.shape[:-1] + (2, 3), dtype=FLOAT)
    jac_cam[..., 0, 0] = cam.fx / z
    jac_cam[..., 0, 2] = -cam.fx * q[..., 0] / (z * z)
    jac_cam[..., 1, 1] = cam.fy / z
    jac_cam[..., 1, 2] = -cam.fy * q[..., 1] / (z * z)
    jac = jac_cam @ cam.extrinsics.rotation
    return np.where(safe[..., None, None], jac, 0.0)


def pinhole_project(cam: CameraModel, p) -> tuple[np.ndarray, float, bool]:
    """Single-point projection; see project_points."""
    p = as_float_array(p, shape=(3,), name="p")
    uv, depth, in_view = project_points(cam, p)
    return uv, float(depth), bool(in_view)
