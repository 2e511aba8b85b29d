"""Two-view structure from motion on keypoint matches.

Normalized eight-point fundamental matrix inside RANSAC (Sampson distance),
essential matrix, cheirality-based pose selection, linear triangulation and
a joint damped Gauss-Newton refinement of pose and points.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguityError, DegenerateGeometryError, NoConsensusError, PreconditionError
from .geometry import (RigidTransform, perturb, project_points, projection_jacobian,
                       triangulate_pairs)
from .pnp import RansacConfig


@dataclass
class TwoViewGeometry:
    F: np.ndarray
    inlier_mask: np.ndarray
    E: np.ndarray = None
    relative_pose: RigidTransform = None


@dataclass
class TwoViewReconstruction:
    pose: RigidTransform
    points: np.ndarray
    point_mask: np.ndarray
    rms_before: float
    rms_after: float
    geometry: TwoViewGeometry

    def to_dict(self):
        d = self.pose.to_dict()
        d.update(rms_before=self.rms_before, rms_after=self.rms_after,
                 num_points=int(len(self.points)),
                 inliers=int(self.geometry.inlier_mask.sum()))
        return d


def _split(matches):
    m = np.asarray(matches, dtype=float)
    if m.ndim != 3 or m.shape[1:] != (2, 2):
        raise PreconditionError("matches must be shaped (N, 2, 2)", stage="sfm")
    return m[:, 0], m[:, 1]


def _hartley(pts):
    c = pts.mean(0)
    d = np.sqrt(np.sum((pts - c) ** 2, axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return T, np.c_[pts, np.ones(len(pts))] @ T.T


def eight_point(x1, x2):
    """Normalized eight-point F (rank 2, unit Frobenius norm) with x2^T F x1 = 0."""
    T1, h1 = _hartley(x1)
    T2, h2 = _hartley(x2)
    A = np.einsum("ni,nj->nij", h2, h1).reshape(len(x1), 9)
    F = np.linalg.svd(A)[2][-1].reshape(3, 3)
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    F = T2.T @ F @ T1
    F /= np.linalg.norm(F)
    return F if F[np.unravel_index(np.abs(F).argmax(), F.shape)] > 0 else -F


def sampson_distance(F, x1, x2):
    """First-order geometric epipolar error in pixels."""
    h1 = np.c_[x1, np.ones(len(x1))]
    h2 = np.c_[x2, np.ones(len(x2))]
    Fx1 = h1 @ F.T
    Ftx2 = h2 @ F
    num = np.sum(h2 * Fx1, axis=1) ** 2
    den = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    return np.sqrt(num / np.maximum(den, 1e-300))


def algebraic_residual(F, x1, x2):
    """|x2^T F x1| with F at unit Frobenius norm and Hartley-normalized points."""
    T1, h1 = _hartley(x1)
    T2, h2 = _hartley(x2)
    Fn = np.linalg.inv(T2).T @ F @ np.linalg.inv(T1)
    Fn /= np.linalg.norm(Fn)
    return np.abs(np.sum(h2 * (h1 @ Fn.T), axis=1))


def _homography(x1, x2):
    T1, h1 = _hartley(x1)
    T2, h2 = _hartley(x2)
    rows = []
    for (u, v, w), (a, b, c) in zip(h1, h2):
        rows.append([0, 0, 0, -c * u, -c * v, -c * w, b * u, b * v, b * w])
        rows.append([c * u, c * v, c * w, 0, 0, 0, -a * u, -a * v, -a * w])
    H = np.linalg.svd(np.array(rows))[2][-1].reshape(3, 3)
    return np.linalg.inv(T2) @ H @ T1


def _homography_explains(x1, x2, thr, fraction=0.9):
    H = _homography(x1, x2)
    p = np.c_[x1, np.ones(len(x1))] @ H.T
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(p[:, :2] / p[:, 2:] - x2, axis=1)
    return np.mean(err < thr) >= fraction


def estimate_fundamental(matches, cfg=RansacConfig()):
    """RANSAC eight-point estimate. Raises when a homography explains the data."""
    x1, x2 = _split(matches)
    n = len(x1)
    if n < 8:
        raise PreconditionError(f"need at least 8 matches, got {n}", stage="sfm.fundamental")
    rng = np.random.default_rng(cfg.rng_seed)
    thr = cfg.inlier_threshold
    best_F, best_count, best_cost = None, 0, np.inf
    cap, it = cfg.max_iters, 0
    while it < min(cap, cfg.max_iters):
        it += 1
        s = rng.choice(n, 8, replace=False)
        F = eight_point(x1[s], x2[s])
        if not np.all(np.isfinite(F)):
            continue
        d = sampson_distance(F, x1, x2)
        count = int(np.sum(d < thr))
        cost = float(np.sum(np.minimum(d, thr) ** 2))
        if count > best_count or (count == best_count and cost < best_cost):
            best_F, best_count, best_cost = F, count, cost
            w = (count / n) ** 8
            cap = 1 if w >= 1 else (math.ceil(math.log(1 - cfg.confidence) / math.log(1 - w))
                                    if w > 0 else cap)
    if best_F is None or best_count < 8:
        raise NoConsensusError("no fundamental matrix reached 8 inliers",
                               stage="sfm.fundamental", best_inliers=best_count)
    mask = sampson_distance(best_F, x1, x2) < thr
    for _ in range(3):
        F = eight_point(x1[mask], x2[mask])
        new = sampson_distance(F, x1, x2) < thr
        if new.sum() < 8:
            break
        done = np.array_equal(new, mask)
        mask, best_F = new, F
        if done:
            break
    if _homography_explains(x1[mask], x2[mask], thr):
        raise DegenerateGeometryError("matches are explained by a homography (planar scene "
                                      "or pure rotation)", stage="sfm.fundamental")
    return TwoViewGeometry(best_F, mask)


def project_essential(M):
    """Closest matrix with two equal singular values and one zero."""
    U, S, Vt = np.linalg.svd(M)
    s = (S[0] + S[1]) / 2.0
    return U @ np.diag([s, s, 0.0]) @ Vt


def essential_from_fundamental(F, camL, camR):
    return project_essential(camR.K.T @ F @ camL.K)


def decompose_essential(E):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    return [(U @ W @ Vt, t), (U @ W @ Vt, -t), (U @ W.T @ Vt, t), (U @ W.T @ Vt, -t)]


def count_in_front(camA, camB, pose, x1, x2):
    X = triangulate_pairs(camA, RigidTransform.identity(), camB, pose, x1, x2)
    ok = np.all(np.isfinite(X), axis=1)
    za = X[:, 2]
    zb = pose.apply(np.nan_to_num(X))[:, 2]
    return int(np.sum(ok & (za > 0) & (zb > 0)))


def recover_pose(E, matches, cams, margin=0.9):
    """Pick the decomposition of E that puts the most points in front of both cameras."""
    x1, x2 = _split(matches)
    camA, camB = cams
    if not np.all(np.isfinite(E)) or np.linalg.norm(E) < 1e-12:
        raise DegenerateGeometryError("essential matrix is zero", stage="sfm.pose")
    if len(x1) < 1:
        raise PreconditionError("no matches", stage="sfm.pose")
    scored = []
    for R, t in decompose_essential(E / np.linalg.norm(E)):
        pose = RigidTransform(R, t / np.linalg.norm(t))
        scored.append((count_in_front(camA, camB, pose, x1, x2), pose))
    scored.sort(key=lambda s: -s[0])
    best, second = scored[0][0], scored[1][0]
    if best == 0:
        raise DegenerateGeometryError("no decomposition puts points in front of both cameras",
                                      stage="sfm.pose")
    if second >= margin * best:
        raise AmbiguityError(f"cheirality is ambiguous ({best} vs {second} points)",
                             stage="sfm.pose")
    return scored[0][1]


def _residuals(camA, camB, pose, X, uvA, uvB):
    pa, _ = project_points(camA, RigidTransform.identity(), X)
    pb, _ = project_points(camB, pose, X)
    return np.concatenate([(pa - uvA).ravel(), (pb - uvB).ravel()])


def _rms(r):
    return float(np.sqrt(np.mean(r.reshape(-1, 2) ** 2) * 2))


def refine_two_view(camA, camB, pose, X, uvA, uvB, max_iter=50, tol=1e-12):
    """Joint damped Gauss-Newton over the relative pose and all points.

    The first camera is fixed at the origin and |t| is renormalized to one
    after every step, which fixes the scale gauge without changing residuals.
    """
    X = np.array(X, dtype=float)
    n = len(X)
    idA = RigidTransform.identity()
    r = _residuals(camA, camB, pose, X, uvA, uvB)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        _, _, JXa = projection_jacobian(camA, idA, X)
        _, Jp, JXb = projection_jacobian(camB, pose, X)
        J = np.zeros((4 * n, 6 + 3 * n))
        for i in range(n):
            J[2 * i:2 * i + 2, 6 + 3 * i:9 + 3 * i] = JXa[i]
            J[2 * n + 2 * i:2 * n + 2 * i + 2, :6] = Jp[i]
            J[2 * n + 2 * i:2 * n + 2 * i + 2, 6 + 3 * i:9 + 3 * i] = JXb[i]
        H = J.T @ J
        g = J.T @ r
        accepted = False
        while lam < 1e12:
            try:
                delta = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-9), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = perturb(pose, delta[:6])
            Xc = X + delta[6:].reshape(n, 3)
            s = np.linalg.norm(cand.translation)
            cand = RigidTransform(cand.rotation, cand.translation / s, tol=1e-4)
            Xc = Xc / s
            rc = _residuals(camA, camB, cand, Xc, uvA, uvB)
            c = float(rc @ rc)
            if c < cost:
                pose, X, r, cost = cand, Xc, rc, c
                lam = max(lam / 10, 1e-15)
                accepted = True
                break
            lam *= 10
        if not accepted or np.linalg.norm(delta) < tol:
            break
    return pose, X, _rms(r)


def reconstruct_two_view(matches, cams, cfg=RansacConfig()):
    """Full chain: F -> E -> pose -> triangulation -> joint refinement."""
    x1, x2 = _split(matches)
    if len(x1) < 8:
        raise PreconditionError(f"need at least 8 matches, got {len(x1)}", stage="sfm")
    camA, camB = cams
    geom = estimate_fundamental(matches, cfg)
    m = geom.inlier_mask
    geom.E = essential_from_fundamental(geom.F, camA, camB)
    pose = recover_pose(geom.E, np.asarray(matches)[m], cams)
    geom.relative_pose = pose
    X = triangulate_pairs(camA, RigidTransform.identity(), camB, pose, x1, x2)
    zb = pose.apply(np.nan_to_num(X))[:, 2]
    keep = m & np.all(np.isfinite(X), axis=1) & (X[:, 2] > 0) & (zb > 0)
    if keep.sum() < 6:
        raise DegenerateGeometryError("too few points triangulated in front of both cameras",
                                      stage="sfm.triangulate")
    r0 = _residuals(camA, camB, pose, X[keep], x1[keep], x2[keep])
    rms_before = _rms(r0)
    pose, Xr, rms_after = refine_two_view(camA, camB, pose, X[keep], x1[keep], x2[keep])
    return TwoViewReconstruction(pose, Xr, keep, rms_before, rms_after, geom)
