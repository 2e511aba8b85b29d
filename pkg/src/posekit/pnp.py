"""Follower-from-leader pose from 3D-2D correspondences.

RANSAC over a four-point minimal solver (closed-form three-point solve, the
fourth point selects among its roots), then damped Gauss-Newton on the
reprojection error of the consensus set.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConsensusError, PreconditionError
from .geometry import RigidTransform, perturb, project_points, projection_jacobian


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 2.0
    max_iters: int = 1000
    confidence: float = 0.999
    min_inliers: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.inlier_threshold <= 0 or self.max_iters < 1:
            raise ValueError("threshold and iteration cap must be positive")


@dataclass
class PnpProblem:
    points3d: np.ndarray
    points2d: np.ndarray
    camera: object

    def __post_init__(self):
        self.points3d = np.asarray(self.points3d, dtype=float).reshape(-1, 3)
        self.points2d = np.asarray(self.points2d, dtype=float).reshape(-1, 2)
        if len(self.points3d) != len(self.points2d):
            raise PreconditionError("3D and 2D point counts differ", stage="pnp")
        if len(self.points3d) < 4:
            raise PreconditionError(f"PnP needs at least 4 correspondences, got "
                                    f"{len(self.points3d)}", stage="pnp")
        d = np.linalg.norm(self.points3d[:, None] - self.points3d[None], axis=2)
        d[np.diag_indices(len(d))] = np.inf
        if d.min() <= 1e-9:
            raise PreconditionError("duplicate 3D points", stage="pnp")

    def __len__(self):
        return len(self.points3d)


@dataclass
class PnpSolution:
    pose: RigidTransform
    inlier_mask: np.ndarray
    rms_reproj: float
    iterations: int = 0

    @property
    def num_inliers(self):
        return int(self.inlier_mask.sum())

    def to_dict(self):
        d = self.pose.to_dict()
        d.update(rms=self.rms_reproj, inliers=self.num_inliers,
                 inlier_mask=[bool(v) for v in self.inlier_mask])
        return d


def _bearings(cam, uv):
    xy = cam.normalize(uv)
    f = np.concatenate([xy, np.ones((len(xy), 1))], axis=1)
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def _kabsch(P, Q):
    """R, t minimising |R P_i + t - Q_i|."""
    mp, mq = P.mean(0), Q.mean(0)
    H = (P - mp).T @ (Q - mq)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, mq - R @ mp


def _polish_depths(s, f, a2, b2, c2, iters=5):
    """Newton steps on the three law-of-cosines equations in the depths."""
    ca, cb, cg = f[1] @ f[2], f[0] @ f[2], f[0] @ f[1]
    for _ in range(iters):
        s1, s2, s3 = s
        r = np.array([s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - a2,
                      s1 * s1 + s3 * s3 - 2 * s1 * s3 * cb - b2,
                      s1 * s1 + s2 * s2 - 2 * s1 * s2 * cg - c2])
        J = np.array([[0.0, 2 * s2 - 2 * s3 * ca, 2 * s3 - 2 * s2 * ca],
                      [2 * s1 - 2 * s3 * cb, 0.0, 2 * s3 - 2 * s1 * cb],
                      [2 * s1 - 2 * s2 * cg, 2 * s2 - 2 * s1 * cg, 0.0]])
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        s = s - step
        if np.abs(step).max() < 1e-15 * max(1.0, np.abs(s).max()):
            break
    return s


def p3p(bearings, world):
    """Grunert's three-point solution. Returns candidate (R, t) pairs."""
    f = np.asarray(bearings, float)
    P = np.asarray(world, float)
    a2 = np.sum((P[1] - P[2]) ** 2)
    b2 = np.sum((P[0] - P[2]) ** 2)
    c2 = np.sum((P[0] - P[1]) ** 2)
    if min(a2, b2, c2) <= 0:
        return []
    ca, cb, cg = f[1] @ f[2], f[0] @ f[2], f[0] @ f[1]
    k = (a2 - c2) / b2
    p = (a2 + c2) / b2
    A4 = (k - 1) ** 2 - 4 * c2 / b2 * ca ** 2
    A3 = 4 * (k * (1 - k) * cb - (1 - p) * ca * cg + 2 * c2 / b2 * ca ** 2 * cb)
    A2 = 2 * (k ** 2 - 1 + 2 * k ** 2 * cb ** 2 + 2 * (b2 - c2) / b2 * ca ** 2
              - 4 * p * ca * cb * cg + 2 * (b2 - a2) / b2 * cg ** 2)
    A1 = 4 * (-k * (1 + k) * cb + 2 * a2 / b2 * cg ** 2 * cb - (1 - p) * ca * cg)
    A0 = (1 + k) ** 2 - 4 * a2 / b2 * cg ** 2
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or np.abs(coeffs).max() == 0:
        return []
    roots = np.roots(coeffs)
    out = []
    for v in roots:
        if abs(v.imag) > 1e-6 * max(1.0, abs(v.real)):
            continue
        v = v.real
        den = 2 * (cg - v * ca)
        if abs(den) < 1e-14:
            continue
        u = ((-1 + k) * v * v - 2 * k * cb * v + 1 + k) / den
        q = 1 + v * v - 2 * v * cb
        if q <= 0:
            continue
        s1 = math.sqrt(b2 / q)
        s = _polish_depths(np.array([s1, u * s1, v * s1]), f, a2, b2, c2)
        if np.any(s <= 0):
            continue
        R, t = _kabsch(P, s[:, None] * f)
        out.append((R, t))
    return out


def _reproj_errors(cam, pose, X, uv):
    proj, z = project_points(cam, pose, X)
    err = np.linalg.norm(proj - uv, axis=1)
    err[~(z > 0)] = np.inf
    return err


def solve_pnp_minimal(points3d, points2d, camera, max_error=8.0, area_tol=1e-9):
    """Pose candidates (0 or 1) from four correspondences.

    Three points with the largest triangle feed the closed-form solve; the
    fourth selects the root. Candidates must place all four points in front
    of the camera and reproject the fourth within ``max_error`` px.
    """
    X = np.asarray(points3d, float).reshape(4, 3)
    uv = np.asarray(points2d, float).reshape(4, 2)
    scale = np.max(np.linalg.norm(X - X.mean(0), axis=1))
    if scale <= 0:
        return []
    best_area, best_tri = 0.0, None
    for tri in itertools.combinations(range(4), 3):
        e1, e2 = X[tri[1]] - X[tri[0]], X[tri[2]] - X[tri[0]]
        area = 0.5 * np.linalg.norm(np.cross(e1, e2))
        if area > best_area:
            best_area, best_tri = area, tri
    if best_tri is None or best_area <= area_tol * scale ** 2:
        return []
    rest = [i for i in range(4) if i not in best_tri][0]
    tri = list(best_tri)
    f = _bearings(camera, uv[tri])
    best, best_err = None, np.inf
    for R, t in p3p(f, X[tri]):
        try:
            pose = RigidTransform(R, t)
        except ValueError:
            continue
        err = _reproj_errors(camera, pose, X, uv)
        if not np.all(np.isfinite(err)):
            continue
        if err[rest] < best_err:
            best, best_err = pose, err[rest]
    if best is None or best_err > max_error:
        return []
    return [best]


def reprojection_rms(pose, prob, mask=None):
    """Root-mean-square pixel residual over the selected correspondences."""
    m = np.ones(len(prob), bool) if mask is None else np.asarray(mask, bool)
    proj, _ = project_points(prob.camera, pose, prob.points3d[m])
    r = proj - prob.points2d[m]
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


def refine_pose(camera, pose, X, uv, max_iter=20, tol=1e-8):
    """Damped Gauss-Newton on the summed squared reprojection error.

    Steps are accepted only when they lower the cost, so the result never
    reprojects worse than the input.
    """
    X = np.asarray(X, float)
    uv = np.asarray(uv, float)

    def cost(p):
        proj, z = project_points(camera, p, X)
        if np.any(z <= 0):
            return np.inf
        return float(np.sum((proj - uv) ** 2))

    current = cost(pose)
    lam = 1e-3
    for _ in range(max_iter):
        proj, J, _ = projection_jacobian(camera, pose, X)
        r = (proj - uv).reshape(-1)
        J = J.reshape(-1, 6)
        H = J.T @ J
        g = J.T @ r
        accepted = False
        while lam < 1e10:
            try:
                delta = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = perturb(pose, delta)
            c = cost(cand)
            if c < current:
                pose, current = cand, c
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            lam *= 10
        if not accepted or np.linalg.norm(delta) < tol:
            break
    return pose


def _required_iters(inlier_ratio, confidence, sample_size=4):
    w = inlier_ratio ** sample_size
    if w <= 0:
        return math.inf
    if w >= 1:
        return 1
    return math.ceil(math.log(1 - confidence) / math.log(1 - w))


def solve_pnp_ransac(prob, cfg=RansacConfig()):
    """Robust pose with an adaptive iteration cap and a final least-squares polish."""
    n = len(prob)
    if n < max(4, cfg.min_inliers):
        raise PreconditionError(f"need at least {max(4, cfg.min_inliers)} correspondences",
                                stage="pnp")
    rng = np.random.default_rng(cfg.rng_seed)
    thr = cfg.inlier_threshold
    best_pose, best_count, best_cost = None, 0, np.inf
    cap = cfg.max_iters
    it = 0
    while it < min(cap, cfg.max_iters):
        it += 1
        sample = rng.choice(n, 4, replace=False)
        for pose in solve_pnp_minimal(prob.points3d[sample], prob.points2d[sample],
                                      prob.camera, max_error=4 * thr):
            err = _reproj_errors(prob.camera, pose, prob.points3d, prob.points2d)
            inl = err < thr
            count = int(inl.sum())
            c = float(np.sum(np.minimum(err, thr) ** 2))
            if count > best_count or (count == best_count and c < best_cost):
                best_pose, best_count, best_cost = pose, count, c
                cap = _required_iters(count / n, cfg.confidence)
    if best_pose is None or best_count < cfg.min_inliers:
        raise NoConsensusError(f"no pose reached {cfg.min_inliers} inliers",
                               stage="pnp", best_inliers=best_count)
    pose = best_pose
    mask = _reproj_errors(prob.camera, pose, prob.points3d, prob.points2d) < thr
    for _ in range(3):
        pose = refine_pose(prob.camera, pose, prob.points3d[mask], prob.points2d[mask])
        new_mask = _reproj_errors(prob.camera, pose, prob.points3d, prob.points2d) < thr
        if np.array_equal(new_mask, mask) or new_mask.sum() < cfg.min_inliers:
            break
        mask = new_mask
    return PnpSolution(pose, mask, reprojection_rms(pose, prob, mask), it)
