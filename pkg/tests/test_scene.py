import filecmp

import numpy as np
import pytest

from posekit.geometry import project_points
from posekit.io import load_image, load_keypoints, read_json
from posekit.scene import SceneSpec, generate_scene, look_at, write_scene


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(persons=0)
    with pytest.raises(ValueError):
        SceneSpec(noise_sigma=-1)
    with pytest.raises(ValueError):
        SceneSpec(layout="ring")


def test_look_at_points_the_optical_axis():
    pose = look_at([1.0, 0.2, -0.5], [0.0, 0.0, 3.0])
    Xc = pose.apply(np.array([[0.0, 0.0, 3.0]]))[0]
    assert abs(Xc[0]) < 1e-12 and abs(Xc[1]) < 1e-12 and Xc[2] > 0


def test_same_seed_writes_identical_files(tmp_path):
    spec = SceneSpec(persons=2, seed=5, width=320, height=240, focal=300.0)
    a = write_scene(generate_scene(spec), tmp_path / "a")
    b = write_scene(generate_scene(spec), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_noiseless_docs_equal_exact_projections(stereo_scene):
    scene, d = stereo_scene
    truth = read_json(d / "ground_truth.json")
    for name, view in scene.views.items():
        kps = load_keypoints(d / f"{name}_keypoints.json")
        ids = truth["views"][name]["person_ids"]
        assert len(kps) == len(ids) > 0
        for person, pid in zip(kps.persons, ids):
            uv, _ = project_points(view.camera, view.pose, scene.persons3d[pid])
            vis = ~np.isnan(person[:, 0])
            assert vis.sum() >= 12
            assert np.abs(person[vis] - uv[vis]).max() < 1e-9


def test_written_files_round_trip(stereo_scene):
    scene, d = stereo_scene
    img = load_image(d / "follower.png")
    assert img.shape == (scene.spec.height, scene.spec.width, 3)
    assert np.array_equal(img, scene.views["follower"].image)
    truth = read_json(d / "ground_truth.json")
    assert np.allclose(truth["persons3d"], scene.persons3d)
    assert "follower_from_leader" in truth


def test_nine_person_pair_layout():
    scene = generate_scene(SceneSpec(persons=9, layout="pair", scale=0.7, seed=1,
                                     width=640, height=480, focal=600.0))
    assert set(scene.views) == {"view_a", "view_b"}
    assert scene.persons3d.shape == (9, 18, 3)
    for v in scene.views.values():
        assert 80 <= np.sum(~np.isnan(v.keypoints.persons[..., 0])) <= 162


def test_noise_and_dropout_are_applied():
    spec = SceneSpec(persons=2, seed=2, noise_sigma=1.0, dropout=0.2, width=640, height=480,
                     focal=600.0)
    scene = generate_scene(spec)
    v = scene.views["leader_left"]
    obs, exact = v.keypoints.persons, v.exact
    both = ~np.isnan(obs[..., 0]) & ~np.isnan(exact[..., 0])
    err = np.linalg.norm(obs[both] - exact[both], axis=1)
    assert 0.5 < err.mean() < 2.0
    dropped = np.isnan(obs[..., 0]) & ~np.isnan(exact[..., 0])
    assert dropped.sum() > 0
