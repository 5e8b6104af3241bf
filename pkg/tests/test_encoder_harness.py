import csv
import json

import numpy as np
import pytest

from viewocc.cli import main as cli_main
from viewocc.encoder import (ModelConfig, MomentumSGD, backward_frame, forward_frame,
                             init_model, load_params, save_params, zero_grads)
from viewocc.errors import ContractViolation
from viewocc.flow_annotation import BEVFlowField
from viewocc.geometry import Pose
from viewocc.harness import (CSV_COLUMNS, TrainSettings, evaluate_model, jsonable,
                             prepare_frames, resolve_preset, train_model)
from viewocc.numerics import FeatureMap
from viewocc.objective import FrameTruth, LossWeights, total_loss
from viewocc.scene_sim import build_rig, preset_scene, save_scene
from viewocc.temporal_stream import BEVGrid, MemoryQueue, queue_push

from helpers import check_grad_array


def _tiny_config(method="view-attn", mode="one-dof") -> ModelConfig:
    return ModelConfig(grid_shape=(2, 4, 4), pitch=0.5, origin=(-1.0, -1.0, -0.25),
                       voxel_channels=8, bev_channels=12, n_classes=3, layers=1,
                       heads=2, points=2, queue_len=2, temporal_points=2,
                       method=method, mode=mode)


def _tiny_inputs(seed=3):
    rng = np.random.default_rng(seed)
    rig = build_rig("stereo2", fov_deg=80.0, width=12, height=9)
    features = [FeatureMap(rng.normal(size=(9, 12, 8))) for _ in rig]
    pose = Pose.from_z_rotation(0.1, (0.05, -0.02, 0.0))
    labels = rng.integers(0, 4, size=(2, 4, 4)).astype(np.int64)
    labels[0, 1, 1] = 2  # keep at least one occupied voxel
    truth = FrameTruth(labels=labels, bev_flow=BEVFlowField(
        flow=rng.normal(size=(4, 4, 2)), valid=rng.random((4, 4)) < 0.6,
        category=np.full((4, 4), 3, dtype=np.int64), pitch=0.5, origin=(-1.0, -1.0)))
    return rng, rig, features, pose, truth


def test_params_save_load_round_trip(tmp_path):
    config = _tiny_config()
    params = init_model(np.random.default_rng(0), config, n_cameras=2)
    save_params(tmp_path / "model", params)
    loaded = load_params(tmp_path / "model")
    assert loaded.config.to_json() == config.to_json()
    orig = params.as_dict()
    back = loaded.as_dict()
    assert sorted(orig) == sorted(back)
    for name in orig:
        np.testing.assert_array_equal(orig[name], back[name])


def test_forward_is_deterministic():
    config = _tiny_config()
    _, rig, features, pose, _ = _tiny_inputs()
    params = init_model(np.random.default_rng(1), config, len(rig))
    a = forward_frame(params, features, rig, pose, MemoryQueue(2))
    b = forward_frame(params, features, rig, pose, MemoryQueue(2))
    np.testing.assert_array_equal(a.pred.occ_logits, b.pred.occ_logits)
    np.testing.assert_array_equal(a.pred.sem_logits, b.pred.sem_logits)
    np.testing.assert_array_equal(a.pred.bev_flow, b.pred.bev_flow)


def test_zero_grads_covers_every_array():
    config = _tiny_config()
    params = init_model(np.random.default_rng(2), config, 2)
    grads = zero_grads(params)
    arrays = params.as_dict()
    assert sorted(grads) == sorted(arrays)
    for name, g in grads.items():
        assert g.shape == arrays[name].shape
        assert not g.any()
    assert params.n_parameters() == sum(a.size for a in arrays.values())


@pytest.mark.parametrize("method", ["view-attn", "proj-first"])
def test_full_model_gradients_match_fd(method):
    config = _tiny_config(method=method)
    rng, rig, features, pose, truth = _tiny_inputs()
    params = init_model(rng, config, len(rig))
    queue = MemoryQueue(config.queue_len)
    weights = LossWeights(flow_weight=1.3)

    def loss_value():
        res = forward_frame(params, features, rig, pose, queue)
        value, _ = total_loss(res.pred, truth, weights)
        return float(value)

    res = forward_frame(params, features, rig, pose, queue, keep_cache=True)
    _, _, loss_grads = total_loss(res.pred, truth, weights, with_grads=True)
    grads = backward_frame(params, res, features, rig, loss_grads)
    arrays = params.as_dict()
    check_rng = np.random.default_rng(17)
    for name in ("query_table", "layers.0.offset_head.weight", "layers.0.logit_head.bias",
                 "layers.0.value_maps.0.weight", "layers.0.output_maps.1.bias",
                 "squeeze.weight", "expand.weight", "occ_head.weight", "sem_head.bias",
                 "flow_head.weight"):
        check_grad_array(loss_value, arrays[name], grads[name], check_rng, tol=2e-4)


def test_temporal_path_gradients_match_fd():
    config = _tiny_config()
    rng, rig, features, pose, truth = _tiny_inputs(seed=5)
    params = init_model(rng, config, len(rig))
    # the star init puts temporal samples exactly on bilinear lattice lines and
    # the closed image border, where the loss is kinked; nudge to a generic spot
    arrays = params.as_dict()
    arrays["temporal.offset_head.weight"] += rng.normal(scale=0.03,
                                                        size=arrays["temporal.offset_head.weight"].shape)
    arrays["temporal.offset_head.bias"] += rng.normal(scale=0.05,
                                                      size=arrays["temporal.offset_head.bias"].shape)
    queue = MemoryQueue(config.queue_len)
    prev = BEVGrid(rng.normal(size=(4, 4, config.bev_channels)), 0.5, (-1.0, -1.0))
    queue_push(queue, prev, Pose.from_z_rotation(0.05, (0.02, 0.0, 0.0)))
    weights = LossWeights()

    def loss_value():
        res = forward_frame(params, features, rig, pose, queue)
        value, _ = total_loss(res.pred, truth, weights)
        return float(value)

    res = forward_frame(params, features, rig, pose, queue, keep_cache=True)
    _, _, loss_grads = total_loss(res.pred, truth, weights, with_grads=True)
    grads = backward_frame(params, res, features, rig, loss_grads)
    arrays = params.as_dict()
    check_rng = np.random.default_rng(18)
    for name in ("temporal.offset_head.weight", "temporal.logit_head.weight",
                 "temporal.value_map.weight", "temporal.output_map.bias",
                 "temporal.feed_forward.weight"):
        check_grad_array(loss_value, arrays[name], grads[name], check_rng, tol=2e-4)


def test_momentum_sgd_two_step_hand_values():
    config = _tiny_config()
    params = init_model(np.random.default_rng(4), config, 2)
    x0 = params.as_dict()["occ_head.bias"].copy()
    grads = zero_grads(params)
    g = np.ones_like(x0)
    grads["occ_head.bias"][:] = g
    opt = MomentumSGD(lr=0.1, momentum=0.9)
    opt.step(params, grads)
    x1 = params.as_dict()["occ_head.bias"]
    np.testing.assert_allclose(x1, x0 - 0.1 * g, atol=1e-15)
    grads["occ_head.bias"][:] = g
    opt.step(params, grads)
    np.testing.assert_allclose(params.as_dict()["occ_head.bias"],
                               x0 - 0.1 * g - 0.1 * 1.9 * g, atol=1e-15)


# --- harness -----------------------------------------------------------------


def test_two_epoch_training_writes_history(tmp_path):
    scene = preset_scene("training")
    config, settings = resolve_preset("small", scene)
    settings.epochs = 2
    csv_path = tmp_path / "curve.csv"
    params, history = train_model(scene, config, settings, csv_path=csv_path)
    assert len(history) == 2
    for row in history:
        assert np.isfinite(row["total"])
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 3
    assert float(rows[1][5]) == pytest.approx(history[0]["total"])


def test_preset_requires_matching_channels():
    scene = preset_scene("rotation")  # renders 12 channels, preset wants 16
    with pytest.raises(ContractViolation):
        resolve_preset("small", scene)


def test_evaluation_stream_resumes_exactly():
    scene = preset_scene("stream")
    config, _ = resolve_preset("small", scene)
    params = init_model(np.random.default_rng(6), config, len(scene.cameras))
    full, _ = evaluate_model(scene, params, frames=range(4))
    head, queue = evaluate_model(scene, params, frames=range(2))
    tail, _ = evaluate_model(scene, params, frames=range(2, 4), queue=queue)
    assert jsonable(full["frames"][:2]) == jsonable(head["frames"])
    assert jsonable(full["frames"][2:]) == jsonable(tail["frames"])


def test_cli_end_to_end(tmp_path, capsys):
    scene_path = tmp_path / "scene.json"
    assert cli_main(["make-scene", "--preset", "training", "--out", str(scene_path)]) == 0
    capsys.readouterr()
    assert json.loads(scene_path.read_text())["feature_channels"] == 16

    report_path = tmp_path / "train.json"
    code = cli_main(["train", "--scene", str(scene_path), "--preset", "small",
                     "--epochs", "1", "--params", str(tmp_path / "model"),
                     "--curve", str(tmp_path / "curve.csv"),
                     "--out", str(report_path)])
    assert code == 0
    capsys.readouterr()
    report = json.loads(report_path.read_text())
    assert report["epochs"] == 1
    assert (tmp_path / "model.json").exists() and (tmp_path / "model.bin").exists()

    code = cli_main(["eval", "--scene", str(scene_path),
                     "--params", str(tmp_path / "model"), "--frames", "0:2"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert [f["frame"] for f in out["frames"]] == [0, 1]

    assert cli_main(["coverage", "--scene", str(scene_path)]) == 0
    cov = json.loads(capsys.readouterr().out)
    assert 0.0 <= float(cov["fraction_multi"]) <= 1.0


def test_cli_rejects_bad_input(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli_main(["coverage", "--scene", str(missing)]) == 2
    err = capsys.readouterr().err
    assert "error" in json.loads(err)


def test_prepared_frames_carry_consistent_shapes():
    scene = preset_scene("boundary")
    frames = prepare_frames(scene, frames=[0])
    fd = frames[0]
    assert fd.labels.shape == scene.grid.shape
    assert fd.visibility.shape == scene.grid.shape
    assert fd.bev_truth.flow.shape == (scene.grid.shape[1], scene.grid.shape[2], 2)
    assert len(fd.features) == len(scene.cameras)
