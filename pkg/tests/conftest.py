import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""
    def record(number, passed, detail):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def stereo_scene(tmp_path_factory):
    """A noiseless two-person stereo scene written to disk: (scene, directory)."""
    from posekit.scene import SceneSpec, generate_scene, write_scene
    scene = generate_scene(SceneSpec(persons=2, seed=3))
    out = write_scene(scene, tmp_path_factory.mktemp("scene"))
    return scene, out


def pipeline_args(d, out, *extra):
    return ["pipeline", "--leader-left", str(d / "leader_left.png"),
            "--leader-right", str(d / "leader_right.png"), "--follower", str(d / "follower.png"),
            "--keypoints-left", str(d / "leader_left_keypoints.json"),
            "--keypoints-right", str(d / "leader_right_keypoints.json"),
            "--keypoints-follower", str(d / "follower_keypoints.json"),
            "--rig", str(d / "rig.json"), "--calib-follower", str(d / "follower_calib.json"),
            "--out", str(out), *extra]
