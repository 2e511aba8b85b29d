import numpy as np
import pytest

from posekit.errors import ParseError
from posekit.geometry import CameraModel, RigidTransform, StereoRig
from posekit.io import (dumps, load_camera, load_image, load_matches, load_rig, read_json,
                        read_ply, rig_to_dict, save_image, write_json, write_ply)


def test_ply_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(25, 3))
    write_ply(tmp_path / "p.ply", pts)
    text = (tmp_path / "p.ply").read_text().splitlines()
    assert text[:3] == ["ply", "format ascii 1.0", "element vertex 25"]
    assert np.abs(read_ply(tmp_path / "p.ply") - pts).max() < 1e-8


def test_json_is_canonical(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, 2]})
    assert (tmp_path / "a.json").read_text() == dumps({"a": [1.5, 2], "b": 1})
    assert read_json(tmp_path / "a.json") == {"a": [1.5, 2], "b": 1}


def test_bad_inputs_raise_parse_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ParseError):
        read_json(tmp_path / "bad.json")
    with pytest.raises(ParseError):
        read_json(tmp_path / "missing.json")
    (tmp_path / "cam.json").write_text('{"fx": 1}')
    with pytest.raises(ParseError):
        load_camera(tmp_path / "cam.json")
    (tmp_path / "img.png").write_text("not a png")
    with pytest.raises(ParseError):
        load_image(tmp_path / "img.png")
    (tmp_path / "m.json").write_text('{"matches": [[1, 2]]}')
    with pytest.raises(ParseError):
        load_matches(tmp_path / "m.json")


def test_image_and_rig_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (12, 10, 3)).astype(float)
    save_image(tmp_path / "i.png", img)
    assert np.array_equal(load_image(tmp_path / "i.png"), img)
    cam = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480)
    rig = StereoRig(cam, cam, RigidTransform.from_rotvec([0, 0.01, 0], [-0.2, 0, 0]))
    write_json(tmp_path / "rig.json", rig_to_dict(rig))
    back = load_rig(tmp_path / "rig.json")
    assert back.left == cam and back.baseline == pytest.approx(0.2)
    assert np.allclose(back.right_from_left.rotation, rig.right_from_left.rotation, atol=1e-12)
