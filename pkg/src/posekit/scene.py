"""Deterministic synthetic scenes of textured person billboards.

Each person is a planar billboard carrying a smooth random texture; its 18
keypoints lie on the billboard, so every view sees the same photometric
structure around a keypoint (up to perspective). Views are ray-cast with a
depth buffer and keypoints hidden behind another billboard are reported
missing. The world frame is the first camera's frame.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .geometry import CameraModel, RigidTransform, StereoRig, project_points
from .keypoints import NUM_SLOTS, KeypointSet, serialize_keypoints, sort_left_to_right

# billboard coordinates for a unit-height person: (across, down from the top)
TEMPLATE = np.array([
    (0.00, 0.08), (0.00, 0.18), (-0.12, 0.20), (-0.18, 0.36), (-0.20, 0.50),
    (0.12, 0.20), (0.18, 0.36), (0.20, 0.50), (-0.08, 0.52), (-0.09, 0.72),
    (-0.10, 0.92), (0.08, 0.52), (0.09, 0.72), (0.10, 0.92), (-0.03, 0.06),
    (0.03, 0.06), (-0.06, 0.07), (0.06, 0.07)])
HALF_WIDTH = 0.30
# texels along a person's height per pixel of focal length; a person at the
# nominal distance of two heights then gets about one texel per pixel
TEXEL_DENSITY = 0.43
TEXTURE_SIGMA = 14.0


@dataclass(frozen=True)
class SceneSpec:
    persons: int = 2
    scale: float = 0.8              # person height in meters
    layout: str = "stereo"          # "stereo": leader rig + follower; "pair": two views
    noise_sigma: float = 0.0        # keypoint noise in px
    outlier_fraction: float = 0.0   # visible keypoints replaced by random pixels
    dropout: float = 0.0            # visible keypoints reported missing
    seed: int = 0
    width: int = 1280
    height: int = 960
    focal: float = 1200.0
    baseline: float = 0.2
    follower_offset: tuple = (0.7, 1.0)   # lateral swing range, in person heights

    def __post_init__(self):
        if self.persons < 1:
            raise ValueError("a scene needs at least one person")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if not (0 <= self.outlier_fraction <= 1 and 0 <= self.dropout <= 1):
            raise ValueError("fractions must lie in [0, 1]")
        if self.layout not in ("stereo", "pair"):
            raise ValueError(f"unknown layout {self.layout!r}")


@dataclass
class Billboard:
    origin: np.ndarray      # world position of the top-center point
    axis_u: np.ndarray      # unit vector across the person
    axis_v: np.ndarray      # unit vector down the person
    size: tuple             # (half width, height) in meters
    texture: np.ndarray     # (th, tw, 3)
    texel: float            # meters per texel

    @property
    def normal(self):
        return np.cross(self.axis_u, self.axis_v)

    def point(self, a, b):
        return self.origin + np.outer(a, self.axis_u) + np.outer(b, self.axis_v)


@dataclass
class View:
    name: str
    camera: CameraModel
    pose: RigidTransform    # camera from world
    image: np.ndarray = None
    keypoints: KeypointSet = None
    person_ids: list = field(default_factory=list)   # generator id per doc person
    exact: np.ndarray = None    # exact projections in doc order, NaN when hidden


@dataclass
class Scene:
    spec: SceneSpec
    persons3d: np.ndarray       # (P, 18, 3) world keypoints
    billboards: list
    views: dict

    @property
    def rig(self):
        if "leader_right" not in self.views:
            return None
        l, r = self.views["leader_left"], self.views["leader_right"]
        return StereoRig(l.camera, r.camera, r.pose.compose(l.pose.inverse()))

    def diameter(self):
        pts = self.persons3d.reshape(-1, 3)
        return float(np.linalg.norm(pts.max(0) - pts.min(0)))


def smooth_texture(rng, shape, sigma, base, amplitude=45.0):
    """Gaussian-filtered white noise rescaled to a fixed contrast around ``base``."""
    noise = rng.standard_normal(shape + (3,))
    tex = np.stack([gaussian_filter(noise[..., c], sigma, mode="wrap") for c in range(3)], -1)
    tex /= tex.std(axis=(0, 1), keepdims=True)
    return np.asarray(base)[None, None, :] + amplitude * tex


def look_at(center, target, up=(0.0, -1.0, 0.0)):
    """Camera-from-world pose of a camera at ``center`` looking at ``target`` (y down)."""
    center = np.asarray(center, float)
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return RigidTransform(R, -R @ center)


def _billboard(rng, position, yaw, scale, focal):
    c, s = math.cos(yaw), math.sin(yaw)
    axis_u = np.array([c, 0.0, -s])
    axis_v = np.array([0.0, 1.0, 0.0])
    texels = int(round(TEXEL_DENSITY * focal))
    texel = scale / texels
    th = texels + 1
    tw = int(2 * HALF_WIDTH * texels) + 1
    base = rng.uniform(70, 185, 3)
    tex = smooth_texture(rng, (th, tw), TEXTURE_SIGMA, base)
    return Billboard(np.asarray(position, float), axis_u, axis_v,
                     (HALF_WIDTH * scale, scale), tex, texel)


def _skeleton(rng, bb, scale):
    pts = TEMPLATE + rng.normal(0.0, 0.012, TEMPLATE.shape)
    pts[:, 0] = np.clip(pts[:, 0], -HALF_WIDTH + 0.05, HALF_WIDTH - 0.05)
    return bb.point(pts[:, 0] * scale, pts[:, 1] * scale)


def _backdrop(rng, depth, extent):
    texel = extent / 512
    tex = smooth_texture(rng, (513, 513), 12.0, (120.0, 120.0, 120.0), amplitude=30.0)
    origin = np.array([-extent / 2, -extent / 2, depth])
    return Billboard(origin + [extent / 2, 0, 0], np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                     (extent / 2, extent), tex, texel)


def _footprint(camera, pose, bb):
    """Pixel window (r0, r1, c0, c1) covering the billboard, or the whole image."""
    hw, h = bb.size
    corners = bb.point(np.array([-hw, hw, -hw, hw]), np.array([0.0, 0.0, h, h]))
    uv, z = project_points(camera, pose, corners)
    H, W = camera.height, camera.width
    if np.any(z <= 0):
        return 0, H, 0, W
    c0, r0 = np.floor(uv.min(0)).astype(int) - 1
    c1, r1 = np.ceil(uv.max(0)).astype(int) + 2
    return max(r0, 0), min(r1, H), max(c0, 0), min(c1, W)


def render(camera, pose, billboards):
    """Ray-cast the billboards; returns (image float (H, W, 3), depth, label)."""
    H, W = camera.height, camera.width
    R, t = pose.rotation, pose.translation
    C = -R.T @ t
    img = np.zeros((H, W, 3))
    depth = np.full((H, W), np.inf)
    label = np.full((H, W), -1)
    for k, bb in enumerate(billboards):
        r0, r1, c0, c1 = _footprint(camera, pose, bb)
        if r0 >= r1 or c0 >= c1:
            continue
        v, u = np.mgrid[r0:r1, c0:c1].astype(float)
        d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy,
                          np.ones_like(u)], -1).reshape(-1, 3)
        d = d_cam @ R          # world directions; camera-frame z component is 1
        n = bb.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((bb.origin - C) @ n) / (d @ n)
        P = C + s[:, None] * d
        a = (P - bb.origin) @ bb.axis_u
        b = (P - bb.origin) @ bb.axis_v
        hw, h = bb.size
        win = (slice(r0, r1), slice(c0, c1))
        dwin = depth[win].reshape(-1)
        hit = (s > 0) & (np.abs(a) <= hw) & (b >= 0) & (b <= h) & (s < dwin)
        if not hit.any():
            continue
        ti = b[hit] / bb.texel
        tj = (a[hit] + hw) / bb.texel
        iw = img[win].reshape(-1, 3)
        iw[hit] = np.stack([map_coordinates(bb.texture[..., c], [ti, tj], order=1,
                                            mode="nearest") for c in range(3)], -1)
        dwin[hit] = s[hit]
        lw = label[win].reshape(-1)
        lw[hit] = k
        img[win] = iw.reshape(r1 - r0, c1 - c0, 3)
        depth[win] = dwin.reshape(r1 - r0, c1 - c0)
        label[win] = lw.reshape(r1 - r0, c1 - c0)
    return img, depth, label


def _observe(rng, spec, view, persons3d, label):
    """Exact and perturbed keypoint projections for one view, in doc order."""
    W, H = spec.width, spec.height
    obs, exact, ids = [], [], []
    for pid, X in enumerate(persons3d):
        uv, z = project_points(view.camera, view.pose, X)
        vis = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= W - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= H - 1)
        ij = np.rint(np.nan_to_num(uv)).astype(int)
        ij[:, 0] = np.clip(ij[:, 0], 0, W - 1)
        ij[:, 1] = np.clip(ij[:, 1], 0, H - 1)
        vis &= label[ij[:, 1], ij[:, 0]] == pid
        ex = np.where(vis[:, None], uv, np.nan)
        noisy = ex + rng.normal(0.0, spec.noise_sigma, ex.shape) if spec.noise_sigma > 0 else ex.copy()
        vis_idx = np.flatnonzero(vis)
        if spec.outlier_fraction > 0 and vis_idx.size:
            k = int(round(spec.outlier_fraction * vis_idx.size))
            pick = rng.choice(vis_idx, k, replace=False)
            noisy[pick] = rng.uniform([0, 0], [W - 1, H - 1], (k, 2))
        if spec.dropout > 0 and vis_idx.size:
            k = int(round(spec.dropout * vis_idx.size))
            noisy[rng.choice(vis_idx, k, replace=False)] = np.nan
        noisy[:, 0] = np.clip(noisy[:, 0], 0, W - 1)
        noisy[:, 1] = np.clip(noisy[:, 1], 0, H - 1)
        if np.sum(~np.isnan(noisy[:, 0])) == 0:
            continue
        obs.append(noisy)
        exact.append(ex)
        ids.append(pid)
    if not obs:
        return KeypointSet(np.zeros((0, NUM_SLOTS, 2)), W, H), np.zeros((0, NUM_SLOTS, 2)), []
    obs = np.array(obs)
    order = _doc_order(obs)
    return (KeypointSet(obs[order], W, H), np.array(exact)[order], [ids[i] for i in order])


def _doc_order(persons):
    sorted_ = sort_left_to_right(persons)
    order = []
    for p in sorted_:
        for i, q in enumerate(persons):
            if i not in order and np.array_equal(p, q, equal_nan=True):
                order.append(i)
                break
    return order


def _layout(rng, spec):
    n, s = spec.persons, spec.scale
    cam = CameraModel(spec.focal, spec.focal, (spec.width - 1) / 2, (spec.height - 1) / 2,
                      spec.width, spec.height)
    if spec.layout == "stereo":
        spacing = 0.8 * s
        xs = (np.arange(n) - (n - 1) / 2) * spacing + rng.uniform(-0.05, 0.05, n) * s
        zs = rng.uniform(1.8, 2.4, n) * s
        tops = np.full(n, -0.5 * s)
        poses = {"leader_left": RigidTransform.identity(),
                 "leader_right": RigidTransform(None, [-spec.baseline, 0.0, 0.0])}
        target = np.array([0.0, 0.0, zs.mean()])
        side = rng.choice([-1.0, 1.0])
        # the follower swings around the group on the leader's circle, so both
        # robots see the persons at about the same distance and scale
        angle = side * math.atan2(rng.uniform(*spec.follower_offset) * s, target[2])
        center = target + target[2] * np.array([-math.sin(angle), 0.0, -math.cos(angle)])
        center[1] = rng.uniform(-0.1, 0.1) * s
        poses["follower"] = look_at(center, target)
        # persons face the point between the two robots
        viewer = center / 2
    else:
        front = min(n, 5)
        back = n - front
        xs = np.concatenate([(np.arange(front) - (front - 1) / 2) * 0.45,
                             (np.arange(back) - (back - 1) / 2) * 0.45]) * s
        zs = np.concatenate([np.full(front, 2.6), np.full(back, 3.3)]) * s
        zs = zs + rng.uniform(-0.1, 0.1, n) * s
        tops = np.concatenate([np.full(front, -0.25), np.full(back, -0.6)]) * s
        poses = {"view_a": RigidTransform.identity()}
        target = np.array([0.0, 0.0, 2.9 * s])
        center = np.array([rng.uniform(0.35, 0.5), rng.uniform(-0.1, 0.1),
                           rng.uniform(-0.1, 0.2)]) * s
        poses["view_b"] = look_at(center, target + rng.normal(0, 0.03, 3) * s)
        viewer = center / 2
    positions = np.stack([xs, tops, zs], 1)
    away = positions - viewer
    yaws = np.arctan2(away[:, 0], away[:, 2]) + rng.normal(0.0, 0.05, n)
    return cam, poses, positions, yaws


def generate_scene(spec):
    """Build and render a scene; deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    cam, poses, positions, yaws = _layout(rng, spec)
    billboards, persons3d = [], []
    for pos, yaw in zip(positions, yaws):
        bb = _billboard(rng, pos, yaw, spec.scale, spec.focal)
        billboards.append(bb)
        persons3d.append(_skeleton(rng, bb, spec.scale))
    backdrop = _backdrop(rng, float(positions[:, 2].max() + 2.0 * spec.scale),
                         12.0 * spec.scale)
    views = {}
    for name, pose in poses.items():
        img, _, label = render(cam, pose, billboards + [backdrop])
        view = View(name, cam, pose, np.clip(np.rint(img), 0, 255))
        view.keypoints, view.exact, view.person_ids = _observe(rng, spec, view,
                                                               np.array(persons3d), label)
        views[name] = view
    return Scene(spec, np.array(persons3d), billboards, views)


def write_scene(scene, out):
    """Write images, keypoint docs, calibration and ground truth into ``out``."""
    from . import io
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth = {"spec": {k: getattr(scene.spec, k) for k in scene.spec.__dataclass_fields__},
             "persons3d": scene.persons3d.tolist(), "views": {}}
    for name, v in scene.views.items():
        io.save_image(out / f"{name}.png", v.image)
        doc = serialize_keypoints(v.keypoints)
        doc["image"] = f"{name}.png"
        io.write_json(out / f"{name}_keypoints.json", doc)
        io.write_json(out / f"{name}_calib.json", v.camera.to_dict())
        truth["views"][name] = {"camera_from_world": v.pose.to_dict(),
                                "person_ids": [int(i) for i in v.person_ids]}
    if scene.rig is not None:
        io.write_json(out / "rig.json", io.rig_to_dict(scene.rig))
        truth["follower_from_leader"] = scene.views["follower"].pose.to_dict()
    io.write_json(out / "ground_truth.json", truth)
    return out
