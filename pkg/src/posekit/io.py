"""File formats: PNG images, JSON documents, camera and rig calibration, ASCII PLY."""
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError
from .geometry import CameraModel, RigidTransform, StereoRig
from .keypoints import parse_keypoints


def load_image(path):
    """8-bit PNG -> float64 (H, W, 3) array with values in [0, 255]."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read image {path}: {e}") from None


def save_image(path, img):
    arr = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from None


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def _parse(what, path, fn):
    try:
        return fn(read_json(path))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(f"{path}: malformed {what}: {e}") from None


def load_camera(path):
    return _parse("camera", path, CameraModel.from_dict)


def load_pose(path):
    return _parse("pose", path, RigidTransform.from_dict)


def rig_to_dict(rig):
    return {"left": rig.left.to_dict(), "right": rig.right.to_dict(),
            "right_from_left": rig.right_from_left.to_dict()}


def rig_from_dict(d):
    return StereoRig(CameraModel.from_dict(d["left"]), CameraModel.from_dict(d["right"]),
                     RigidTransform.from_dict(d["right_from_left"]))


def load_rig(path):
    return _parse("rig", path, rig_from_dict)


def load_keypoints(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from None
    return parse_keypoints(text)


def load_matches(path):
    """Match document: {"matches": [[[xa, ya], [xb, yb]], ...]} -> (N, 2, 2)."""
    def conv(d):
        m = np.asarray(d["matches"], dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2):
            raise ValueError("matches must be a list of [[xa, ya], [xb, yb]] pairs")
        return m
    return _parse("matches", path, conv)


def write_ply(path, points):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z", "end_header"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    text = Path(path).read_text().splitlines()
    try:
        end = text.index("end_header")
        n = next(int(l.split()[2]) for l in text if l.startswith("element vertex"))
    except (ValueError, StopIteration, IndexError):
        raise ParseError(f"{path}: not an ASCII PLY point cloud") from None
    rows = [list(map(float, l.split()[:3])) for l in text[end + 1:end + 1 + n]]
    return np.array(rows, dtype=float).reshape(-1, 3)
