import json

import numpy as np
import pytest

from conftest import pipeline_args
from oracles import known_shift_pair, procrustes_rms
from posekit.cli import main
from posekit.geometry import CameraModel, RigidTransform, pose_errors, project_points
from posekit.io import read_json, read_ply, save_image, write_json
from posekit.pnp import PnpProblem, RansacConfig, solve_pnp_ransac


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline_out(stereo_scene, tmp_path_factory):
    _, d = stereo_scene
    out = tmp_path_factory.mktemp("pipe")
    assert run(pipeline_args(d, out, "--deterministic", "--report")) == 0
    return out


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_noiseless_pipeline_pose(stereo_scene, pipeline_out):
    _, d = stereo_scene
    truth = RigidTransform.from_dict(read_json(d / "ground_truth.json")["follower_from_leader"])
    est = RigidTransform.from_dict(read_json(pipeline_out / "pose.json"))
    rot, trans = pose_errors(est, truth)
    assert rot < 0.1 and trans < 0.005


def test_pipeline_artifacts(pipeline_out):
    for name in ("pose.json", "correspondences.json", "points.json", "points.ply",
                 "associations.json", "refinement.csv", "refinement.png",
                 "reprojection.csv", "reprojection.png"):
        assert (pipeline_out / name).is_file(), name
    pose = read_json(pipeline_out / "pose.json")
    assert {"quaternion", "translation", "rms", "inliers"} <= set(pose)
    assert "timestamp" not in pose and "timings" not in pose
    assert len(read_ply(pipeline_out / "points.ply")) == len(read_json(pipeline_out / "points.json"))


def test_pipeline_timings_without_deterministic(stereo_scene, tmp_path):
    _, d = stereo_scene
    assert run(pipeline_args(d, tmp_path)) == 0
    pose = read_json(tmp_path / "pose.json")
    assert "timestamp" in pose and set(pose["timings"]) >= {"reid", "refine", "pnp"}


def test_pipeline_deterministic_reruns(stereo_scene, pipeline_out, tmp_path):
    _, d = stereo_scene
    assert run(pipeline_args(d, tmp_path, "--deterministic", "--report")) == 0
    for p in pipeline_out.iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_stage_isolation(stereo_scene, pipeline_out, tmp_path):
    _, d = stereo_scene
    t = tmp_path
    kl, kr, kf = (d / f"{n}_keypoints.json" for n in ("leader_left", "leader_right", "follower"))
    assert run(["reid", "--leader", d / "leader_left.png", "--keypoints-leader", kl,
                "--follower", d / "follower.png", "--keypoints-follower", kf,
                "--out", t / "a_f.json"]) == 0
    assert run(["reid", "--leader", d / "leader_left.png", "--keypoints-leader", kl,
                "--follower", d / "leader_right.png", "--keypoints-follower", kr,
                "--out", t / "a_r.json"]) == 0
    assoc = read_json(pipeline_out / "associations.json")
    assert read_json(t / "a_f.json") == assoc["follower"]
    assert read_json(t / "a_r.json") == assoc["stereo"]
    assert run(["refine", "--leader", d / "leader_left.png", "--follower", d / "leader_right.png",
                "--keypoints-leader", kl, "--keypoints-follower", kr,
                "--associations", t / "a_r.json", "--out", t / "c_r.json"]) == 0
    assert run(["refine", "--leader", d / "leader_left.png", "--follower", d / "follower.png",
                "--keypoints-leader", kl, "--keypoints-follower", kf,
                "--associations", t / "a_f.json", "--out", t / "c_f.json"]) == 0
    cs = read_json(pipeline_out / "correspondences.json")
    assert read_json(t / "c_r.json") == cs["stereo"]
    assert read_json(t / "c_f.json") == cs["follower"]
    assert run(["triangulate", "--rig", d / "rig.json", "--correspondences", t / "c_r.json",
                "--out", t / "tri"]) == 0
    assert (t / "tri" / "points.json").read_bytes() == (pipeline_out / "points.json").read_bytes()
    assert run(["pnp", "--points", t / "tri" / "points.json", "--correspondences", t / "c_f.json",
                "--calib-follower", d / "follower_calib.json", "--out", t / "pose.json"]) == 0
    assert (t / "pose.json").read_bytes() == (pipeline_out / "pose.json").read_bytes()


def test_no_association_exit_code(stereo_scene, tmp_path, capsys):
    _, d = stereo_scene
    # a follower image with nobody in it
    doc = read_json(d / "follower_keypoints.json")
    doc["people"] = []
    write_json(tmp_path / "empty.json", doc)
    args = pipeline_args(d, tmp_path / "o")
    args[args.index("--keypoints-follower") + 1] = str(tmp_path / "empty.json")
    assert run(args) == 4
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == 4 and err["stage"] == "reid"


def test_unsynchronized_frames_exit_code(stereo_scene, tmp_path):
    _, d = stereo_scene
    doc = read_json(d / "follower_keypoints.json")
    doc["timestamp"] = 5.0
    write_json(tmp_path / "late.json", doc)
    args = pipeline_args(d, tmp_path / "o")
    args[args.index("--keypoints-follower") + 1] = str(tmp_path / "late.json")
    assert run(args) == 4


def test_parse_error_exit_code(stereo_scene, tmp_path):
    _, d = stereo_scene
    (tmp_path / "bad.json").write_text("{")
    args = pipeline_args(d, tmp_path / "o")
    args[args.index("--rig") + 1] = str(tmp_path / "bad.json")
    assert run(args) == 3


def test_missing_file_is_usage_error(stereo_scene, tmp_path):
    _, d = stereo_scene
    args = pipeline_args(d, tmp_path / "o")
    args[args.index("--rig") + 1] = str(tmp_path / "nope.json")
    assert run(args) == 2


def test_refine_known_shift(tmp_path):
    rng = np.random.default_rng(11)
    lead, foll = known_shift_pair(rng, (5.0, -3.0))
    save_image(tmp_path / "l.png", lead)
    save_image(tmp_path / "f.png", foll)
    write_json(tmp_path / "c.json", [{"p_l": [150.0, 120.0], "p_f": [150.0, 120.0], "slot": 0}])
    assert run(["refine", "--leader", tmp_path / "l.png", "--follower", tmp_path / "f.png",
                "--correspondences", tmp_path / "c.json", "--out", tmp_path / "o.json"]) == 0
    (c,) = read_json(tmp_path / "o.json")
    assert np.hypot(c["p_f"][0] - 155.0, c["p_f"][1] - 117.0) < 0.5
    assert c["p_f0"] == [150.0, 120.0] and c["flag"] == "ok" and c["loss"] <= c["loss0"]


def test_sfm_exact_matches(tmp_path):
    rng = np.random.default_rng(0)
    cam = CameraModel(600.0, 600.0, 320.0, 240.0, 640, 480)
    X = np.column_stack([rng.uniform(-1, 1, 30), rng.uniform(-0.7, 0.7, 30),
                         rng.uniform(3, 5, 30)])
    pose = RigidTransform.from_rotvec([0, 0.15, 0.02], [-1.0, 0.1, 0.2])
    uvA, _ = project_points(cam, RigidTransform.identity(), X)
    uvB, _ = project_points(cam, pose, X)
    write_json(tmp_path / "m.json", {"matches": np.stack([uvA, uvB], 1).tolist()})
    write_json(tmp_path / "cam.json", cam.to_dict())
    assert run(["sfm", "--matches", tmp_path / "m.json", "--calib-a", tmp_path / "cam.json",
                "--calib-b", tmp_path / "cam.json", "--out", tmp_path / "o"]) == 0
    pts = read_ply(tmp_path / "o" / "points.ply")
    assert len(pts) == 30
    assert procrustes_rms(pts, X) < 1e-6
    assert read_json(tmp_path / "o" / "pose.json")["rms_after"] < 1e-8


def test_sfm_too_few_matches(tmp_path):
    write_json(tmp_path / "m.json", {"matches": [[[0, 0], [1, 1]]] * 5})
    write_json(tmp_path / "cam.json", CameraModel(1.0, 1.0, 0.0, 0.0, 2, 2).to_dict())
    assert run(["sfm", "--matches", tmp_path / "m.json", "--calib-a", tmp_path / "cam.json",
                "--calib-b", tmp_path / "cam.json", "--out", tmp_path / "o"]) == 2


def test_pnp_point_arrays(tmp_path):
    from oracles import pnp_fixture
    cam, pose, X, uv, _ = pnp_fixture(1)
    write_json(tmp_path / "X.json", X.tolist())
    write_json(tmp_path / "uv.json", uv.tolist())
    write_json(tmp_path / "cam.json", cam.to_dict())
    assert run(["pnp", "--points3d", tmp_path / "X.json", "--points2d", tmp_path / "uv.json",
                "--calib", tmp_path / "cam.json", "--seed", "1", "--out", tmp_path / "p.json"]) == 0
    doc = read_json(tmp_path / "p.json")
    ref = solve_pnp_ransac(PnpProblem(X, uv, cam), RansacConfig(rng_seed=1))
    assert doc["inliers"] == ref.num_inliers
    assert np.allclose(doc["translation"], ref.pose.translation, atol=1e-12)


def test_pnp_needs_four_points(tmp_path):
    write_json(tmp_path / "X.json", [[0, 0, 1], [1, 0, 1], [0, 1, 1]])
    write_json(tmp_path / "uv.json", [[0, 0], [1, 0], [0, 1]])
    write_json(tmp_path / "cam.json", CameraModel(1.0, 1.0, 0.0, 0.0, 2, 2).to_dict())
    assert run(["pnp", "--points3d", tmp_path / "X.json", "--points2d", tmp_path / "uv.json",
                "--calib", tmp_path / "cam.json", "--out", tmp_path / "p.json"]) == 2


def test_sync_replay(tmp_path):
    items = [{"timestamp": 1.0, "source": "leader"}, {"timestamp": 1.01, "source": "follower"},
             {"timestamp": 1.2, "source": "leader"}, {"timestamp": 1.3, "source": "follower"}]
    write_json(tmp_path / "s.json", {"items": items})
    assert run(["sync-replay", "--stream", tmp_path / "s.json", "--out", tmp_path / "o.json"]) == 0
    pairs = read_json(tmp_path / "o.json")
    assert [(p["leader"]["timestamp"], p["follower"]["timestamp"]) for p in pairs] == [(1.0, 1.01)]
    items.append({"timestamp": 0.5, "source": "leader"})
    write_json(tmp_path / "s.json", items)
    assert run(["sync-replay", "--stream", tmp_path / "s.json", "--out", tmp_path / "o.json"]) == 2


def test_roc_command(tmp_path):
    pairs = [{"score": 0.9, "same": True}, {"score": 0.7, "same": True},
             {"score": 0.1, "same": False}, {"score": 0.5, "same": False}]
    write_json(tmp_path / "s.json", pairs)
    assert run(["roc", "--scores", tmp_path / "s.json", "--out", tmp_path / "r"]) == 0
    assert (tmp_path / "r" / "roc.csv").is_file() and (tmp_path / "r" / "roc.png").is_file()


def test_generate_command(tmp_path):
    assert run(["generate", "--out", tmp_path, "--seed", "4", "--persons", "1"]) == 0
    assert (tmp_path / "rig.json").is_file() and (tmp_path / "follower.png").is_file()
