import dataclasses

import numpy as np
import pytest

from viewocc.errors import ContractViolation
from viewocc.geometry import project_points
from viewocc.scene_sim import (build_rig, load_scene, preset_scene, ray_visibility,
                               render_all_cameras, render_camera_features,
                               rotated_about_z, save_scene, scene_ground_truth,
                               surface_feature, with_feature_channels, _march)


# --- rig geometry ------------------------------------------------------------


def test_forward_camera_puts_axis_point_at_image_center():
    cam, = build_rig("mono1", fov_deg=55.0, mount_height=1.5)
    uv, depth, ok = project_points(cam, np.array([[2.0, 0.0, 1.5]]))
    assert ok[0] and abs(depth[0] - 2.0) < 1e-12
    np.testing.assert_allclose(uv[0], [cam.cx, cam.cy], atol=1e-12)


def test_fov_edge_lands_on_image_border():
    cam, = build_rig("mono1", fov_deg=70.0, width=48, height=36)
    half = np.radians(35.0)
    right = np.array([[2.0 * np.cos(half), -2.0 * np.sin(half), 1.5]])
    left = np.array([[2.0 * np.cos(half), 2.0 * np.sin(half), 1.5]])
    uv_r, _, ok_r = project_points(cam, right)
    uv_l, _, ok_l = project_points(cam, left)
    assert ok_r[0] and ok_l[0]
    assert abs(uv_r[0, 0] - (cam.width - 1)) < 1e-9
    assert abs(uv_l[0, 0] - 0.0) < 1e-9


def test_surround_rig_axes_and_positions():
    rig = build_rig("surround6", mount_height=1.5)
    assert [c.name for c in rig] == [f"cam{i}" for i in range(6)]
    for i, cam in enumerate(rig):
        inv = cam.extrinsics.inverse()
        yaw = np.radians(60.0 * i)
        # each camera sits 0.4 m out along its own viewing direction
        np.testing.assert_allclose(
            inv.translation, [0.4 * np.cos(yaw), 0.4 * np.sin(yaw), 1.5], atol=1e-12)
        axis = inv.rotation @ np.array([0.0, 0.0, 1.0])  # optical axis in ego frame
        np.testing.assert_allclose(axis, [np.cos(yaw), np.sin(yaw), 0.0], atol=1e-12)


def test_stereo_rig_baseline():
    left, right = build_rig("stereo2")
    np.testing.assert_allclose(left.extrinsics.inverse().translation, [0.0, 0.3, 1.5],
                               atol=1e-12)
    np.testing.assert_allclose(right.extrinsics.inverse().translation, [0.0, -0.3, 1.5],
                               atol=1e-12)


def test_unknown_rig_rejected():
    with pytest.raises(ContractViolation):
        build_rig("octo8")


# --- scene description -------------------------------------------------------


def test_scene_json_round_trip(tmp_path):
    scene = preset_scene("training")
    obj = scene.to_json()
    again = type(scene).from_json(obj).to_json()
    assert again == obj
    path = tmp_path / "scene.json"
    save_scene(path, scene)
    assert load_scene(path).to_json() == obj


def test_preset_is_deterministic():
    a = preset_scene("boundary", seed=11)
    b = preset_scene("boundary", seed=11)
    assert a.to_json() == b.to_json()


def test_with_feature_channels_changes_only_width():
    scene = preset_scene("rotation")
    wide = with_feature_channels(scene, 20)
    assert wide.feature_channels == 20
    assert wide.grid.to_json() == scene.grid.to_json()
    fmap = render_camera_features(wide, 0, 0)
    assert fmap.data.shape[-1] == 20
    with pytest.raises(ContractViolation):
        with_feature_channels(scene, 2)  # fewer channels than classes


# --- rendering ---------------------------------------------------------------


def test_render_misses_are_zero_and_hits_match_surface_features():
    scene = preset_scene("training")
    frame, cam_index = 1, 0
    cam = scene.cameras[cam_index]
    fmap = render_camera_features(scene, frame, cam_index)
    hit, hit_points, class_idx, _, _ = _march(scene, frame, cam)
    pixels = fmap.data.reshape(-1, scene.feature_channels)
    assert hit.any() and not hit.all()
    np.testing.assert_array_equal(pixels[~hit], 0.0)
    pick = np.flatnonzero(hit)[::200]
    ego_pose = scene.ego_trajectory[frame]
    for p in pick:
        world = ego_pose.apply(hit_points[p])
        cls = scene.class_ids[class_idx[p]]
        np.testing.assert_allclose(pixels[p], surface_feature(scene, cls, world),
                                   atol=1e-12)


def test_render_is_reproducible_across_save_load(tmp_path):
    scene = preset_scene("boundary")
    path = tmp_path / "scene.json"
    save_scene(path, scene)
    reloaded = load_scene(path)
    for j in range(len(scene.cameras)):
        a = render_camera_features(scene, 0, j).data
        b = render_camera_features(reloaded, 0, j).data
        np.testing.assert_array_equal(a, b)


def test_rotating_scene_and_rig_together_preserves_images():
    scene = preset_scene("rotation")
    rotated = rotated_about_z(scene, 2.0 * np.pi * 5.0 / 16.0)
    for j in range(len(scene.cameras)):
        a = render_camera_features(scene, 0, j).data
        b = render_camera_features(rotated, 0, j).data
        assert np.max(np.abs(a - b)) < 1e-9


def test_rotation_moves_ego_frame_content():
    scene = preset_scene("rotation")
    rotated = rotated_about_z(scene, np.pi / 2.0)
    labels_a, _ = scene_ground_truth(scene, 0)
    labels_b, _ = scene_ground_truth(rotated, 0)
    assert (labels_a != labels_b).any()


def test_rotation_requires_identity_ego():
    with pytest.raises(ContractViolation):
        rotated_about_z(preset_scene("training"), 0.3)


# --- ground truth ------------------------------------------------------------


def test_ground_truth_labels_and_flow_agree():
    scene = preset_scene("training")
    labels, flow = scene_ground_truth(scene, 1)
    assert flow.occupied.any()
    np.testing.assert_array_equal(labels[flow.occupied], flow.category[flow.occupied])
    present = set(np.unique(labels).tolist())
    assert {0, 1, 3} <= present  # free space, ground, and the movers
    assert 2 in present  # walls
    # flow may only live on box voxels
    assert np.all(flow.flow[~flow.occupied] == 0.0)


def test_first_frame_flow_is_zero():
    scene = preset_scene("training")
    _, flow = scene_ground_truth(scene, 0)
    assert flow.occupied.any()
    np.testing.assert_array_equal(flow.flow, 0.0)


def test_moving_box_carries_nonzero_flow_after_first_frame():
    scene = preset_scene("stream")
    _, flow = scene_ground_truth(scene, 3)
    speeds = np.linalg.norm(flow.flow[flow.occupied], axis=-1)
    assert speeds.max() > 0.1


# --- visibility --------------------------------------------------------------


def test_ray_visibility_shape_and_coverage():
    scene = preset_scene("training")
    seen = ray_visibility(scene, 1)
    assert seen.shape == scene.grid.shape
    assert 0 < seen.sum() < seen.size  # some voxels observed, some not


def test_ray_visibility_grows_with_cameras():
    scene = preset_scene("training")
    narrow = dataclasses.replace(scene, cameras=scene.cameras[:2])
    seen_narrow = ray_visibility(narrow, 0)
    seen_full = ray_visibility(scene, 0)
    assert not (seen_narrow & ~seen_full).any()
    assert (seen_full & ~seen_narrow).any()


def test_render_all_cameras_covers_rig():
    scene = preset_scene("training")
    maps = render_all_cameras(scene, 0)
    assert len(maps) == len(scene.cameras)
    for fmap in maps:
        assert np.abs(fmap.data).max() > 0.0  # every camera sees some content
