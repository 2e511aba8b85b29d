"""Person re-identification across two images by hierarchical part SSIM.

Each person is summarized by up to six body-part boxes. Two persons are
compared on the parts both of them show: the leader crop is resized to the
follower crop and scored with a whole-patch SSIM, and the part scores are
averaged. Followers are then assigned to leaders greedily by score.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import NoAssociationError, PreconditionError
from .keypoints import MIN_BOX_AREA, PART_LABELS, Box, extract_boxes
from .ssim import as_image, ssim_window

TIE = 1e-9


@dataclass(frozen=True)
class ReidConfig:
    delta_min: float = 0.4
    min_area: float = MIN_BOX_AREA

    def __post_init__(self):
        if not 0 <= self.delta_min <= 1:
            raise ValueError("delta_min must lie in [0, 1]")


@dataclass(frozen=True)
class Association:
    follower_index: int
    leader_index: int
    score: float
    parts_used: tuple

    def to_dict(self):
        return {"follower": self.follower_index, "leader": self.leader_index,
                "score": self.score, "parts_used": list(self.parts_used)}


class LabeledPair(NamedTuple):
    score: float
    same: bool


def _check_box(img, box, min_area):
    H, W = img.shape[:2]
    box = Box(*box)
    if not box.width > 0 or not box.height > 0 or box.area < min_area:
        raise PreconditionError(f"box {tuple(box)} is degenerate or below {min_area} px^2",
                                stage="reid")
    if box.x_min < 0 or box.y_min < 0 or box.x_max > W - 1 or box.y_max > H - 1:
        raise PreconditionError(f"box {tuple(box)} leaves the {W}x{H} image", stage="reid")
    return box


def crop(img, box, size):
    """Bilinear resample of ``box`` onto a (rows, cols) grid spanning it."""
    rows, cols = size
    ys = np.linspace(box.y_min, box.y_max, rows)
    xs = np.linspace(box.x_min, box.x_max, cols)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([map_coordinates(img[..., c], [yy, xx], order=1, mode="nearest")
                     for c in range(img.shape[2])], -1)


def crop_size(box):
    return (int(round(box.height)) + 1, int(round(box.width)) + 1)


def part_similarity(img_l, box_l, img_f, box_f, min_area=MIN_BOX_AREA):
    """Channel-averaged SSIM of the leader crop resized onto the follower crop."""
    img_l, img_f = as_image(img_l), as_image(img_f)
    box_l = _check_box(img_l, box_l, min_area)
    box_f = _check_box(img_f, box_f, min_area)
    size = crop_size(box_f)
    return ssim_window(crop(img_l, box_l, size), crop(img_f, box_f, size))


def pair_boxes(p_l, size_l, p_f, size_f, cfg=ReidConfig()):
    """Part boxes of both persons built from the keypoints visible in both.

    Masking to the shared keypoints keeps a part box spanning the same body
    members in each view, and makes the result symmetric in its arguments.
    """
    shared = ~np.isnan(p_l[:, 0]) & ~np.isnan(p_f[:, 0])
    ml = np.where(shared[:, None], p_l, np.nan)
    mf = np.where(shared[:, None], p_f, np.nan)
    bl = extract_boxes(ml, size_l, cfg.min_area).present()
    bf = extract_boxes(mf, size_f, cfg.min_area).present()
    parts = tuple(p for p in PART_LABELS if p in bl and p in bf)
    return parts, bl, bf


def score_matrix(leader, follower, cfg=ReidConfig()):
    """Aggregated scores S[f, l] and the parts used per pair; -inf when no part is shared."""
    img_l, kps_l = leader
    img_f, kps_f = follower
    img_l, img_f = as_image(img_l), as_image(img_f)
    S = np.full((len(kps_f), len(kps_l)), -np.inf)
    parts = {}
    for f, pf in enumerate(kps_f.persons):
        for l, pl in enumerate(kps_l.persons):
            shared, bl, bf = pair_boxes(pl, kps_l.image_size, pf, kps_f.image_size, cfg)
            parts[f, l] = shared
            if shared:
                S[f, l] = float(np.mean([part_similarity(img_l, bl[p], img_f, bf[p],
                                                         cfg.min_area) for p in shared]))
    return S, parts


def assign(S, delta_min):
    """Greedy descending-score assignment; returns [(f, l, score)] in follower order.

    A leader claimed at a strictly higher score is unavailable; exact ties
    (within 1e-9) may share a leader.
    """
    cand = [(S[f, l], f, l) for f in range(S.shape[0]) for l in range(S.shape[1])
            if np.isfinite(S[f, l]) and S[f, l] >= delta_min]
    cand.sort(key=lambda c: (-c[0], c[1], c[2]))
    done, claimed = {}, {}
    for s, f, l in cand:
        if f in done:
            continue
        if l in claimed and claimed[l] - s > TIE:
            continue
        done[f] = (l, s)
        claimed.setdefault(l, s)
    return [(f, *done[f]) for f in sorted(done)]


def associate(leader, follower, cfg=ReidConfig()):
    """Match follower persons to leader persons; ``leader``/``follower`` are (image, KeypointSet)."""
    S, parts = score_matrix(leader, follower, cfg)
    return [Association(int(f), int(l), float(s), parts[f, l]) for f, l, s in assign(S, cfg.delta_min)]


def associate_or_raise(leader, follower, cfg=ReidConfig()):
    out = associate(leader, follower, cfg)
    if not out:
        raise NoAssociationError("no follower person matched a leader person", stage="reid")
    return out


def roc_sweep(gallery, thresholds):
    """(threshold, TPR, FPR) per threshold; a pair is accepted when score >= threshold."""
    items = [LabeledPair(float(s), bool(y)) for s, y in gallery]
    if not items:
        raise PreconditionError("empty corpus", stage="reid")
    scores = np.array([i.score for i in items])
    same = np.array([i.same for i in items])
    if same.all() or not same.any():
        raise PreconditionError("corpus needs both same and different pairs", stage="reid")
    out = []
    for t in thresholds:
        acc = scores >= t
        out.append((float(t), float(acc[same].mean()), float(acc[~same].mean())))
    return out


def auc(roc):
    """Area under the (FPR, TPR) curve, closed with the (0, 0) and (1, 1) corners."""
    pts = sorted({(0.0, 0.0), (1.0, 1.0), *((f, t) for _, t, f in roc)})
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def corpus_thresholds(n=201):
    return list(np.linspace(-1.0, 1.0 + 1e-6, n))
