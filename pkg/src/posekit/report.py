"""CSV tables and matplotlib figures for pipeline and ReId runs."""
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import project_points  # noqa: E402

# no creation date or software tag, so figures are byte-stable
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def refinement_rows(kind, cs):
    for c in cs:
        yield [kind, c.person[0], c.person[1], c.slot, *map(_fmt, (*c.p_l, *c.p_f0, *c.p_f)),
               _fmt(c.loss0), _fmt(c.loss), c.iters, c.flag]


def plot_refinement(path, groups):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    for kind, cs in groups.items():
        ok = [c for c in cs if c.loss is not None]
        if not ok:
            continue
        ax1.scatter([c.loss0 for c in ok], [c.loss for c in ok], s=12, label=kind)
        ax2.hist([np.hypot(c.p_f[0] - c.p_f0[0], c.p_f[1] - c.p_f0[1]) for c in ok],
                 bins=20, alpha=0.6, label=kind)
    lim = ax1.get_xlim()
    ax1.plot(lim, lim, "k--", lw=0.8)
    ax1.set_xlabel("loss before")
    ax1.set_ylabel("loss after")
    ax1.legend()
    ax2.set_xlabel("keypoint displacement (px)")
    ax2.set_ylabel("count")
    ax2.legend()
    fig.tight_layout()
    _save(fig, path)


def reprojection_rows(res, camera):
    lookup = {(l, s): X for l, s, X in res.points}
    rows, k = [], 0
    for c in res.follower:
        X = lookup.get((c.person[0], c.slot))
        if X is None or c.flag not in ("ok", "clamped_start"):
            continue
        uv, _ = project_points(camera, res.pose, X)
        inl = bool(res.solution.inlier_mask[k])
        k += 1
        rows.append((c.person[0], c.slot, *c.p_f, *uv[0], float(np.hypot(*(uv[0] - c.p_f))),
                     inl))
    return rows


def plot_reprojection(path, rows, camera):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    r = np.array([row[2:6] for row in rows], float).reshape(-1, 4)
    inl = np.array([row[7] for row in rows], bool)
    ax.scatter(r[inl, 0], r[inl, 1], s=14, label="observed (inlier)")
    ax.scatter(r[~inl, 0], r[~inl, 1], s=14, marker="x", label="observed (outlier)")
    ax.scatter(r[:, 2], r[:, 3], s=30, facecolors="none", edgecolors="k", label="reprojected")
    ax.set_xlim(0, camera.width)
    ax.set_ylim(camera.height, 0)
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("follower reprojection")
    fig.tight_layout()
    _save(fig, path)


def write_pipeline_report(out, res, camera):
    out = Path(out)
    _write_csv(out / "refinement.csv",
               ["kind", "leader", "other", "slot", "p_l_x", "p_l_y", "p_f0_x", "p_f0_y",
                "p_f_x", "p_f_y", "loss0", "loss", "iters", "flag"],
               [*refinement_rows("stereo", res.stereo), *refinement_rows("follower", res.follower)])
    plot_refinement(out / "refinement.png", {"stereo": res.stereo, "follower": res.follower})
    rows = reprojection_rows(res, camera)
    _write_csv(out / "reprojection.csv",
               ["leader", "slot", "obs_x", "obs_y", "proj_x", "proj_y", "error_px", "inlier"],
               [[*row[:2], *map(_fmt, row[2:7]), int(row[7])] for row in rows])
    plot_reprojection(out / "reprojection.png", rows, camera)


def write_roc_report(out, roc, area):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "roc.csv", ["threshold", "tpr", "fpr"],
               [[_fmt(t), _fmt(tp), _fmt(fp)] for t, tp, fp in roc])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    pts = sorted((fp, tp) for _, tp, fp in roc)
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".")
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ReId ROC, AUC = {area:.3f}")
    fig.tight_layout()
    _save(fig, out / "roc.png")
