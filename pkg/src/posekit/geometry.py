"""Pinhole cameras, rigid transforms, projection and triangulation."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCameraError, DegenerateGeometryError


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def image_size(self):
        return (self.width, self.height)

    def normalize(self, uv):
        """Pixels -> normalized image coordinates (x/z, y/z)."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], -1)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


class RigidTransform:
    """x' = R x + t. Maps points from a source frame into a target frame."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None, tol=1e-6):
        R = np.eye(3) if rotation is None else np.array(rotation, dtype=float)
        t = np.zeros(3) if translation is None else np.array(translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        drift = np.abs(R.T @ R - np.eye(3)).max()
        if drift > tol or np.linalg.det(R) <= 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        if drift > 1e-12:
            # inputs within tolerance are snapped onto SO(3)
            U, _, Vt = np.linalg.svd(R)
            R = U @ Vt
        self.rotation = R
        self.translation = t

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def nearest(cls, M, translation=None):
        """Project an arbitrary 3x3 matrix onto SO(3)."""
        U, _, Vt = np.linalg.svd(M)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
        return cls(U @ D @ Vt, translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=None):
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def from_quaternion(cls, wxyz, translation=None):
        w, x, y, z = wxyz
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), translation)

    @property
    def quaternion(self):
        """Unit quaternion (w, x, y, z) with w >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return q if q[0] >= 0 else -q

    @property
    def rotvec(self):
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.rotation.T + self.translation

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    @property
    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def to_dict(self):
        return {"quaternion": [float(v) for v in self.quaternion],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d):
        q = d.get("quaternion", d.get("rotation"))
        return cls.from_quaternion(q, d["translation"])

    def __repr__(self):
        return f"RigidTransform(rotvec={self.rotvec.round(6)}, t={self.translation.round(6)})"


@dataclass(frozen=True)
class StereoRig:
    left: CameraModel
    right: CameraModel
    right_from_left: RigidTransform

    def __post_init__(self):
        if self.baseline <= 0:
            raise ValueError("stereo baseline must be positive")

    @property
    def baseline(self):
        return float(np.linalg.norm(self.right_from_left.translation))


def rotation_error_deg(Ra, Rb):
    """Angle of the relative rotation between Ra and Rb, in degrees."""
    c = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_errors(est, truth):
    """(rotation error in degrees, translation error relative to |t_truth|)."""
    rot = rotation_error_deg(est.rotation, truth.rotation)
    trans = np.linalg.norm(est.translation - truth.translation) / np.linalg.norm(truth.translation)
    return rot, float(trans)


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def project_points(cam, pose, X):
    """Vectorized projection; returns pixels (N, 2) and depths (N,) without checks."""
    Xc = pose.apply(np.atleast_2d(X))
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([cam.fx * Xc[:, 0] / z + cam.cx, cam.fy * Xc[:, 1] / z + cam.cy], 1)
    return uv, z


def project(cam, pose, X):
    X = np.asarray(X, dtype=float)
    uv, z = project_points(cam, pose, X.reshape(-1, 3))
    if np.any(z <= 0):
        raise BehindCameraError("point is not in front of the camera", stage="geometry",
                                depth=float(z.min()))
    return uv[0] if X.ndim == 1 else uv


def unproject(cam, pose, uv):
    """Back-project pixels to rays in the source frame of ``pose``.

    Returns (camera center, unit direction) with direction shaped like ``uv``.
    """
    xy = cam.normalize(uv)
    d = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    d = d @ pose.rotation  # R^T d for row vectors
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    center = -pose.rotation.T @ pose.translation
    return center, d


def projection_jacobian(cam, pose, X):
    """Pixels and Jacobians of the projection of points X (N, 3).

    Returns uv (N, 2), J_pose (N, 2, 6) for a left perturbation
    R <- exp([w]x) R, t <- t + dt with parameters (w, dt), and J_X (N, 2, 3).
    """
    X = np.atleast_2d(X)
    Xc = pose.apply(X)
    x, y, z = Xc.T
    uv = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], 1)
    dpi = np.zeros((len(X), 2, 3))
    dpi[:, 0, 0] = cam.fx / z
    dpi[:, 0, 2] = -cam.fx * x / z ** 2
    dpi[:, 1, 1] = cam.fy / z
    dpi[:, 1, 2] = -cam.fy * y / z ** 2
    RX = X @ pose.rotation.T
    # d(exp([w]x) R X)/dw at w=0 is -[R X]x
    dw = np.zeros((len(X), 3, 3))
    dw[:, 0, 1], dw[:, 0, 2] = RX[:, 2], -RX[:, 1]
    dw[:, 1, 0], dw[:, 1, 2] = -RX[:, 2], RX[:, 0]
    dw[:, 2, 0], dw[:, 2, 1] = RX[:, 1], -RX[:, 0]
    J_pose = np.concatenate([dpi @ dw, dpi], axis=2)
    J_X = dpi @ pose.rotation
    return uv, J_pose, J_X


def perturb(pose, delta):
    """Apply a 6-vector (w, dt) update in the convention of ``projection_jacobian``."""
    dR = Rotation.from_rotvec(delta[:3]).as_matrix()
    return RigidTransform(dR @ pose.rotation, pose.translation + delta[3:], tol=1e-4)


def triangulate_stereo(rig, pL, pR, min_angle=1e-9):
    """Midpoint of the common perpendicular of the two viewing rays (left frame)."""
    c1, d1 = unproject(rig.left, RigidTransform.identity(), np.asarray(pL, float))
    c2, d2 = unproject(rig.right, rig.right_from_left, np.asarray(pR, float))
    cross = np.cross(d1, d2)
    sin = np.linalg.norm(cross)
    angle = float(np.arcsin(min(sin, 1.0)))
    if angle < min_angle:
        raise DegenerateGeometryError("viewing rays are parallel", stage="triangulate",
                                      ray_angle=angle)
    # solve c1 + s d1 + u (d1 x d2) = c2 + r d2 in least squares
    A = np.stack([d1, -d2], axis=1)
    b = c2 - c1
    s, r = np.linalg.lstsq(A, b, rcond=None)[0]
    return 0.5 * ((c1 + s * d1) + (c2 + r * d2))


class Triangulation(NamedTuple):
    point: np.ndarray
    rms: float


def triangulate_linear(views, obs, rank_tol=1e-10):
    """DLT triangulation from two or more (camera, pose) views.

    Rows are built in normalized image coordinates for conditioning.
    Returns the point and the reprojection rms in pixels.
    """
    if len(views) < 2 or len(views) != len(obs):
        raise DegenerateGeometryError("need at least two views with one observation each",
                                      stage="triangulate")
    rows = []
    for (cam, pose), uv in zip(views, obs):
        x, y = cam.normalize(np.asarray(uv, float))
        P = np.hstack([pose.rotation, pose.translation[:, None]])
        rows.append(x * P[2] - P[0])
        rows.append(y * P[2] - P[1])
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, s, Vt = np.linalg.svd(A)
    if s[-2] <= rank_tol * s[0]:
        raise DegenerateGeometryError("triangulation system is rank deficient",
                                      stage="triangulate")
    Xh = Vt[-1]
    if abs(Xh[3]) <= rank_tol * np.linalg.norm(Xh):
        raise DegenerateGeometryError("triangulated point is at infinity", stage="triangulate")
    X = Xh[:3] / Xh[3]
    res = [project_points(cam, pose, X)[0][0] - np.asarray(uv, float)
           for (cam, pose), uv in zip(views, obs)]
    rms = float(np.sqrt(np.mean(np.sum(np.square(res), axis=1))))
    return Triangulation(X, rms)


def fundamental_from_pose(camA, camB, pose):
    """F with x_B^T F x_A = 0 for ``pose`` mapping frame A to frame B."""
    E = skew(pose.translation) @ pose.rotation
    return np.linalg.inv(camB.K).T @ E @ np.linalg.inv(camA.K)


def epipolar_line(F, p, tol=1e-12):
    """Line l = F p (a, b, c) scaled so that a^2 + b^2 = 1."""
    ph = np.array([p[0], p[1], 1.0])
    line = np.asarray(F, float) @ ph
    n = np.hypot(line[0], line[1])
    if n <= tol * np.linalg.norm(F) * np.linalg.norm(ph):
        raise DegenerateGeometryError("point maps to a null epipolar line", stage="geometry")
    return line / n


def point_line_distance(line, p):
    return float(abs(line[0] * p[0] + line[1] * p[1] + line[2]))


def align_similarity(src, dst):
    """Least-squares similarity (s, R, t) with dst ~ s R src + t (Umeyama)."""
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    U, S, Vt = np.linalg.svd(b.T @ a / len(src))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    s = np.trace(np.diag(S) @ D) / (a ** 2).sum(1).mean()
    t = md - s * R @ ms
    return s, R, t


def aligned_rms(src, dst):
    """RMS distance between ``dst`` and the similarity-aligned ``src``."""
    s, R, t = align_similarity(src, dst)
    moved = s * np.asarray(src) @ R.T + t
    return float(np.sqrt(np.mean(np.sum((moved - dst) ** 2, axis=1))))


def triangulate_pairs(camA, poseA, camB, poseB, uvA, uvB):
    """Batched two-view DLT. Returns points (N, 3); rows at infinity are NaN."""
    xa = camA.normalize(np.asarray(uvA, float))
    xb = camB.normalize(np.asarray(uvB, float))
    Pa = np.hstack([poseA.rotation, poseA.translation[:, None]])
    Pb = np.hstack([poseB.rotation, poseB.translation[:, None]])
    A = np.stack([xa[:, :1] * Pa[2] - Pa[0], xa[:, 1:] * Pa[2] - Pa[1],
                  xb[:, :1] * Pb[2] - Pb[0], xb[:, 1:] * Pb[2] - Pb[1]], axis=1)
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    Xh = np.linalg.svd(A)[2][:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:]
    X[np.abs(Xh[:, 3]) < 1e-12] = np.nan
    return X
