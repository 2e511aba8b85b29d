"""``posekit`` command-line driver.

Exit codes: 0 success, 2 usage, 3 parse, 4 no association, 5 refinement
degenerate, 6 no consensus, 7 degenerate geometry.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import NoAssociationError, ParseError, PosekitError
from .pnp import RansacConfig
from .refine import RefineConfig
from .reid import ReidConfig
from .sync import SyncConfig

log = logging.getLogger("posekit")


def _ransac(args):
    return RansacConfig(inlier_threshold=args.threshold, rng_seed=args.seed)


def _refine_cfg(args):
    return RefineConfig(eta=args.eta, max_iter=args.max_iter, region=args.region)


def _list(doc, key):
    return doc[key] if isinstance(doc, dict) else doc


def cmd_generate(args):
    from .scene import SceneSpec, generate_scene, write_scene
    spec = SceneSpec(persons=args.persons, layout=args.layout, noise_sigma=args.noise,
                     outlier_fraction=args.outliers, dropout=args.dropout, seed=args.seed)
    write_scene(generate_scene(spec), args.out)


def cmd_reid(args):
    from .reid import associate
    leader = (io.load_image(args.leader), io.load_keypoints(args.keypoints_leader))
    follower = (io.load_image(args.follower), io.load_keypoints(args.keypoints_follower))
    assocs = associate(leader, follower, ReidConfig(delta_min=args.delta_min))
    io.write_json(args.out, [a.to_dict() for a in assocs])
    if not assocs:
        raise NoAssociationError("no follower person matched a leader person", stage="reid")


def cmd_refine(args):
    from .pipeline import build_correspondences, correspondences_doc, correspondences_from_doc
    from .refine import refine_all
    from .reid import Association
    if args.correspondences:
        cs = correspondences_from_doc(_list(io.read_json(args.correspondences), "correspondences"))
        cs = [c.__class__(c.p_l, c.p_f0, c.slot, c.person) for c in cs]
    else:
        if not (args.keypoints_leader and args.keypoints_follower and args.associations):
            raise ParseError("refine needs --correspondences or keypoints plus --associations")
        assocs = [Association(d["follower"], d["leader"], d["score"], tuple(d["parts_used"]))
                  for d in io.read_json(args.associations)]
        cs = build_correspondences(io.load_keypoints(args.keypoints_leader),
                                   io.load_keypoints(args.keypoints_follower), assocs)
    out = refine_all(io.load_image(args.leader), io.load_image(args.follower), cs,
                     _refine_cfg(args))
    io.write_json(args.out, correspondences_doc(out))


def cmd_triangulate(args):
    from .pipeline import correspondences_from_doc, points_doc, triangulate_correspondences
    rig = io.load_rig(args.rig)
    cs = correspondences_from_doc(_list(io.read_json(args.correspondences), "stereo"))
    pts = triangulate_correspondences(rig, cs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "points.json", points_doc(pts))
    io.write_ply(out / "points.ply", [X for _, _, X in pts])


def cmd_pnp(args):
    from .pipeline import correspondences_from_doc, pnp_from_points, points_from_doc, pose_doc
    from .pnp import PnpProblem, solve_pnp_ransac
    camera = io.load_camera(args.calib)
    if args.points3d and args.points2d:
        X = np.asarray(io.read_json(args.points3d), dtype=float)
        uv = np.asarray(io.read_json(args.points2d), dtype=float)
        sol = solve_pnp_ransac(PnpProblem(X, uv, camera), _ransac(args))
    elif args.points and args.correspondences:
        pts = points_from_doc(io.read_json(args.points))
        cs = correspondences_from_doc(_list(io.read_json(args.correspondences), "follower"))
        sol = pnp_from_points(pts, cs, camera, _ransac(args))
    else:
        raise ParseError("pnp needs --points3d/--points2d or --points/--correspondences")
    io.write_json(args.out, pose_doc(sol))


def cmd_sfm(args):
    from .sfm import reconstruct_two_view
    rec = reconstruct_two_view(io.load_matches(args.matches),
                               (io.load_camera(args.calib_a), io.load_camera(args.calib_b)),
                               _ransac(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "pose.json", {"frame": "b_from_a", **rec.to_dict()})
    io.write_ply(out / "points.ply", rec.points)


def cmd_sync_replay(args):
    from .sync import StampedItem, replay
    doc = _list(io.read_json(args.stream), "items")
    try:
        items = [StampedItem(float(d["timestamp"]), d.get("payload"), d["source"]) for d in doc]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{args.stream}: malformed stream item: {e}") from None
    pairs = replay(items, SyncConfig(args.window, args.capacity), args.mode)
    io.write_json(args.out, [{"leader": p.leader._asdict(), "follower": p.follower._asdict(),
                              "dt": p.dt} for p in pairs])


def cmd_pipeline(args):
    from .pipeline import PipelineConfig, run_pipeline
    cfg = PipelineConfig(args.leader_left, args.leader_right, args.follower, args.keypoints_left,
                         args.keypoints_right, args.keypoints_follower, args.rig,
                         args.calib_follower, args.out,
                         reid=ReidConfig(delta_min=args.delta_min), refine=_refine_cfg(args),
                         ransac=_ransac(args), sync=SyncConfig(args.window),
                         deterministic=args.deterministic, report=args.report)
    res = run_pipeline(cfg)
    print(io.dumps({"inliers": res.solution.num_inliers, "rms": res.solution.rms_reproj,
                    **res.pose.to_dict()}), end="")


def cmd_roc(args):
    from .reid import auc, corpus_thresholds, roc_sweep
    from .report import write_roc_report
    doc = _list(io.read_json(args.scores), "pairs")
    try:
        gallery = [(float(d["score"]), bool(d["same"])) for d in doc]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{args.scores}: malformed score entry: {e}") from None
    roc = roc_sweep(gallery, corpus_thresholds())
    write_roc_report(args.out, roc, auc(roc))


def build_parser():
    p = argparse.ArgumentParser(prog="posekit", description="Relative pose from people in view.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def ransac_args(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threshold", type=float, default=2.0, help="inlier threshold, px")

    def refine_args(sp):
        d = RefineConfig()
        sp.add_argument("--eta", type=float, default=d.eta)
        sp.add_argument("--max-iter", type=int, default=d.max_iter)
        sp.add_argument("--region", type=float, default=d.region)

    g = sub.add_parser("generate", help="write a synthetic scene")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--persons", type=int, default=2)
    g.add_argument("--layout", choices=("stereo", "pair"), default="stereo")
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--outliers", type=float, default=0.0)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reid", help="associate persons across two images")
    r.add_argument("--leader", required=True)
    r.add_argument("--keypoints-leader", required=True)
    r.add_argument("--follower", required=True)
    r.add_argument("--keypoints-follower", required=True)
    r.add_argument("--delta-min", type=float, default=ReidConfig().delta_min)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reid)

    f = sub.add_parser("refine", help="SSIM refinement of follower keypoints")
    f.add_argument("--leader", required=True)
    f.add_argument("--follower", required=True)
    f.add_argument("--correspondences")
    f.add_argument("--keypoints-leader")
    f.add_argument("--keypoints-follower")
    f.add_argument("--associations")
    f.add_argument("--out", required=True)
    refine_args(f)
    f.set_defaults(func=cmd_refine)

    t = sub.add_parser("triangulate", help="stereo triangulation of refined correspondences")
    t.add_argument("--rig", required=True)
    t.add_argument("--correspondences", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_triangulate)

    n = sub.add_parser("pnp", help="follower pose from 3D points and refined keypoints")
    n.add_argument("--points3d", help="JSON list of [x, y, z] in the leader frame")
    n.add_argument("--points2d", help="JSON list of [u, v] follower pixels")
    n.add_argument("--points", help="points.json written by triangulate")
    n.add_argument("--correspondences", help="refined follower correspondences")
    n.add_argument("--calib", "--calib-follower", dest="calib", required=True)
    n.add_argument("--out", required=True)
    ransac_args(n)
    n.set_defaults(func=cmd_pnp)

    s = sub.add_parser("sfm", help="two-view reconstruction from matches")
    s.add_argument("--matches", required=True)
    s.add_argument("--calib-a", required=True)
    s.add_argument("--calib-b", required=True)
    s.add_argument("--out", required=True)
    ransac_args(s)
    s.set_defaults(func=cmd_sfm)

    y = sub.add_parser("sync-replay", help="replay a timestamp stream through the scheduler")
    y.add_argument("--stream", required=True)
    y.add_argument("--window", type=float, default=SyncConfig().window)
    y.add_argument("--capacity", type=int, default=SyncConfig().buffer_capacity)
    y.add_argument("--mode", choices=("stable", "eager"), default="stable")
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_sync_replay)

    q = sub.add_parser("pipeline", help="end-to-end follower pose")
    for name in ("leader-left", "leader-right", "follower", "keypoints-left", "keypoints-right",
                 "keypoints-follower", "rig", "calib-follower", "out"):
        q.add_argument(f"--{name}", required=True)
    q.add_argument("--delta-min", type=float, default=ReidConfig().delta_min)
    q.add_argument("--window", type=float, default=SyncConfig().window)
    q.add_argument("--deterministic", action="store_true",
                   help="omit wall-clock fields so repeated runs are byte-identical")
    q.add_argument("--report", action="store_true", help="also write CSV tables and figures")
    ransac_args(q)
    refine_args(q)
    q.set_defaults(func=cmd_pipeline)

    o = sub.add_parser("roc", help="ROC table and figure from labeled ReId scores")
    o.add_argument("--scores", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_roc)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PosekitError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.code
    except ValueError as e:
        print(json.dumps({"error": str(e), "code": 2, "stage": args.command}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
