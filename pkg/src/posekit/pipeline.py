"""End-to-end relative pose: sync, re-identify, refine, triangulate, PnP.

The leader carries a calibrated stereo pair; the follower has one camera.
The result is the follower camera pose in the leader-left camera frame,
i.e. the transform taking leader-left coordinates to follower coordinates.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import (DegenerateGeometryError, NoAssociationError, PreconditionError,
                     RefinementDegenerateError)
from .geometry import triangulate_stereo
from .pnp import PnpProblem, RansacConfig, solve_pnp_ransac
from .refine import CLAMPED_START, OK, Correspondence, RefineConfig, refine_all
from .reid import ReidConfig, associate
from .sync import FOLLOWER, LEADER, StampedItem, SyncBuffer, SyncConfig


@dataclass
class PipelineConfig:
    leader_left: str
    leader_right: str
    follower: str
    keypoints_left: str
    keypoints_right: str
    keypoints_follower: str
    rig: str
    calib_follower: str
    out: str
    reid: ReidConfig = field(default_factory=ReidConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    deterministic: bool = False
    report: bool = False

    def __post_init__(self):
        for name in ("leader_left", "leader_right", "follower", "keypoints_left",
                     "keypoints_right", "keypoints_follower", "rig", "calib_follower"):
            if not Path(getattr(self, name)).is_file():
                raise PreconditionError(f"{name}: no such file {getattr(self, name)}",
                                        stage="config")


@dataclass
class PipelineResult:
    solution: object
    associations: dict
    stereo: list
    follower: list
    points: list            # [(leader person, slot, xyz)]
    timings: dict

    @property
    def pose(self):
        return self.solution.pose


def check_sync(t_leader, t_follower, cfg=SyncConfig()):
    buf = SyncBuffer(cfg, mode="eager")
    buf.push(StampedItem(t_leader, None, LEADER))
    if not buf.push(StampedItem(t_follower, None, FOLLOWER)):
        raise NoAssociationError(f"leader frame {t_leader} and follower frame {t_follower} "
                                 f"are more than {cfg.window} s apart", stage="sync")


def build_correspondences(kps_l, kps_f, assocs):
    """One correspondence per slot visible in both persons of every association."""
    out = []
    for a in assocs:
        pl, pf = kps_l.persons[a.leader_index], kps_f.persons[a.follower_index]
        for s in np.flatnonzero(~np.isnan(pl[:, 0]) & ~np.isnan(pf[:, 0])):
            out.append(Correspondence(pl[s], pf[s], int(s), (a.leader_index, a.follower_index)))
    return out


def usable(c):
    return c.flag in (OK, CLAMPED_START)


def triangulate_correspondences(rig, stereo):
    """3D points in the leader-left frame keyed by (leader person, slot)."""
    pts = []
    for c in stereo:
        if not usable(c):
            continue
        try:
            X = triangulate_stereo(rig, c.p_l, c.p_f)
        except DegenerateGeometryError:
            continue
        if X[2] > 0 and rig.right_from_left.apply(X)[2] > 0:
            pts.append((c.person[0], c.slot, X))
    return pts


def pnp_from_points(points, follower, camera, cfg=RansacConfig()):
    """Join 3D points and follower correspondences on (leader person, slot) and solve PnP."""
    lookup = {(l, s): X for l, s, X in points}
    X, uv = [], []
    for c in follower:
        key = (c.person[0], c.slot)
        if usable(c) and key in lookup:
            X.append(lookup[key])
            uv.append(c.p_f)
    if len(X) < 4:
        raise PreconditionError(f"only {len(X)} 3D-2D correspondences survived", stage="pnp")
    return solve_pnp_ransac(PnpProblem(np.array(X), np.array(uv), camera), cfg)


def estimate_relative_pose(left, right, follower, rig, camera, reid=ReidConfig(),
                           refine=RefineConfig(), ransac=RansacConfig(), sync=SyncConfig()):
    """In-memory pipeline; ``left``/``right``/``follower`` are (image, KeypointSet)."""
    timings = {}
    t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        now = time.perf_counter()
        timings[name] = now - t0
        t0 = now

    check_sync(left[1].timestamp, follower[1].timestamp, sync)
    lap("sync")
    a_f = associate(left, follower, reid)
    if not a_f:
        raise NoAssociationError("no follower person matched a leader person", stage="reid")
    a_r = associate(left, right, reid)
    if not a_r:
        raise NoAssociationError("no person matched across the leader stereo pair", stage="reid")
    lap("reid")
    # keep only leader persons seen in all three images
    both = {a.leader_index for a in a_f} & {a.leader_index for a in a_r}
    if not both:
        raise NoAssociationError("no leader person is matched in both the right and the "
                                 "follower image", stage="reid")
    a_f = [a for a in a_f if a.leader_index in both]
    a_r = [a for a in a_r if a.leader_index in both]
    cs_r = build_correspondences(left[1], right[1], a_r)
    cs_f = build_correspondences(left[1], follower[1], a_f)
    if not cs_r or not cs_f:
        raise NoAssociationError("associated persons share no visible keypoints", stage="reid")
    stereo = refine_all(left[0], right[0], cs_r, refine)
    foll = refine_all(left[0], follower[0], cs_f, refine)
    if not any(map(usable, stereo)) or not any(map(usable, foll)):
        raise RefinementDegenerateError("every correspondence left the refinement domain",
                                        stage="refine")
    lap("refine")
    points = triangulate_correspondences(rig, stereo)
    lap("triangulate")
    sol = pnp_from_points(points, foll, camera, ransac)
    lap("pnp")
    return PipelineResult(sol, {"follower": a_f, "stereo": a_r}, stereo, foll, points, timings)


def points_doc(points):
    return [{"leader": int(l), "slot": int(s), "point": [float(v) for v in X]}
            for l, s, X in points]


def points_from_doc(doc):
    return [(int(d["leader"]), int(d["slot"]), np.asarray(d["point"], float)) for d in doc]


def correspondences_doc(cs):
    return [c.to_dict() for c in cs]


def correspondences_from_doc(doc):
    from dataclasses import replace
    out = []
    for d in doc:
        c = Correspondence(d["p_l"], d["p_f"], d.get("slot", 0),
                           (d.get("leader", 0), d.get("follower", 0)),
                           p_f0=d.get("p_f0"))
        out.append(replace(c, loss0=d.get("loss0"), loss=d.get("loss"),
                           iters=d.get("iters", 0), flag=d.get("flag", OK)))
    return out


def pose_doc(sol, timings=None):
    d = {"frame": "follower_from_leader_left", **sol.to_dict()}
    if timings is not None:
        d["timestamp"] = time.time()
        d["timings"] = {k: round(v, 6) for k, v in timings.items()}
    return d


def run_pipeline(cfg):
    """File-level pipeline; writes its artifacts into ``cfg.out`` and returns the result."""
    rig = io.load_rig(cfg.rig)
    camera = io.load_camera(cfg.calib_follower)
    left = (io.load_image(cfg.leader_left), io.load_keypoints(cfg.keypoints_left))
    right = (io.load_image(cfg.leader_right), io.load_keypoints(cfg.keypoints_right))
    foll = (io.load_image(cfg.follower), io.load_keypoints(cfg.keypoints_follower))
    res = estimate_relative_pose(left, right, foll, rig, camera, cfg.reid, cfg.refine,
                                 cfg.ransac, cfg.sync)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "associations.json",
                  {k: [a.to_dict() for a in v] for k, v in res.associations.items()})
    io.write_json(out / "correspondences.json", {"stereo": correspondences_doc(res.stereo),
                                                 "follower": correspondences_doc(res.follower)})
    io.write_json(out / "points.json", points_doc(res.points))
    io.write_ply(out / "points.ply", [X for _, _, X in res.points])
    io.write_json(out / "pose.json",
                  pose_doc(res.solution, None if cfg.deterministic else res.timings))
    if cfg.report:
        from .report import write_pipeline_report
        write_pipeline_report(out, res, camera)
    return res
