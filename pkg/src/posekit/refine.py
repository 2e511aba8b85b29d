"""SSIM-driven refinement of follower keypoints against fixed leader keypoints.

Each follower point descends ``1 - SSIM`` between a square patch around the
leader point and a bilinearly sampled patch around the follower point, with
iterates projected onto an L-infinity box around the starting location.
Points are refined together as one stacked batch; items never interact, so
batching is purely a throughput device.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import PreconditionError
from .ssim import (DEFAULT_SSIM, as_image, patch_in_bounds, sample_patch, ssim_and_grad,
                   ssim_batch, ssim_map)
from .threads import worker_count

OK = "ok"
LEADER_OUT_OF_BOUNDS = "leader_out_of_bounds"
INFEASIBLE = "infeasible"
CLAMPED_START = "clamped_start"

_EDGE = 1e-6


@dataclass(frozen=True)
class RefineConfig:
    patch: int = 32
    region: float = 32.0
    # px^2 per unit loss; 0.003 would move a point < 0.01 px over 100 steps
    eta: float = 40.0
    max_iter: int = 100
    tol: float = 1e-4

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.patch < DEFAULT_SSIM.window:
            raise ValueError("patch smaller than the SSIM window")


@dataclass(frozen=True)
class Correspondence:
    p_l: tuple
    p_f: tuple
    slot: int = 0
    person: tuple = (0, 0)
    p_f0: tuple = None
    loss0: float = None
    loss: float = None
    iters: int = 0
    flag: str = None

    def __post_init__(self):
        object.__setattr__(self, "p_l", tuple(float(v) for v in self.p_l))
        object.__setattr__(self, "p_f", tuple(float(v) for v in self.p_f))
        if self.p_f0 is None:
            object.__setattr__(self, "p_f0", self.p_f)
        else:
            object.__setattr__(self, "p_f0", tuple(float(v) for v in self.p_f0))

    def to_dict(self):
        return {"leader": int(self.person[0]), "follower": int(self.person[1]),
                "slot": int(self.slot), "p_l": list(self.p_l), "p_f0": list(self.p_f0),
                "p_f": list(self.p_f), "loss0": self.loss0, "loss": self.loss,
                "iters": int(self.iters), "flag": self.flag}

    @classmethod
    def from_dict(cls, d):
        return cls(p_l=d["p_l"], p_f=d.get("p_f0", d.get("p_f")), slot=d.get("slot", 0),
                   person=(d.get("leader", 0), d.get("follower", 0)))


def _shape(cfg):
    return (cfg.patch, cfg.patch)


def refine_loss(img_l, img_f, c, cfg=RefineConfig()):
    """``1 - ssim_map`` between the leader patch at ``p_l`` and the follower patch at ``p_f``."""
    img_l, img_f = as_image(img_l), as_image(img_f)
    x = sample_patch(img_l, c.p_l, _shape(cfg))
    y = sample_patch(img_f, c.p_f, _shape(cfg))
    return 1.0 - ssim_map(x, y)


def feasible_box(img_shape, p0, cfg):
    """Box of admissible follower positions: the L-inf ball around ``p0``
    intersected with the centers whose patch stays inside the image."""
    half = (cfg.patch - 1) / 2.0
    r = cfg.region - _EDGE
    p0 = np.asarray(p0, dtype=float)
    lo = np.maximum(p0 - r, half)
    hi = np.minimum(p0 + r, np.array([img_shape[1] - 1 - half, img_shape[0] - 1 - half]))
    return lo, hi


def refine_one(img_l, img_f, c, cfg=RefineConfig()):
    return refine_all(img_l, img_f, [c], cfg)[0]


def refine_all(img_l, img_f, cs, cfg=RefineConfig(), threads=None):
    """Refine every correspondence in ``cs``; results keep the input order."""
    cs = list(cs)
    if not cs:
        raise PreconditionError("nothing to refine", stage="refine")
    img_l, img_f = as_image(img_l), as_image(img_f)
    if img_l.shape[2] != img_f.shape[2]:
        raise PreconditionError("leader and follower channel counts differ", stage="refine")
    n = worker_count() if threads is None else threads
    if n <= 1 or len(cs) < 2 * n:
        return _refine_batch(img_l, img_f, cs, cfg)
    chunks = [cs[i::n] for i in range(n)]
    with ThreadPoolExecutor(n) as pool:
        parts = list(pool.map(lambda ch: _refine_batch(img_l, img_f, ch, cfg), chunks))
    out = [None] * len(cs)
    for i, part in enumerate(parts):
        out[i::n] = part
    return out


def _refine_batch(img_l, img_f, cs, cfg):
    shape = _shape(cfg)
    out = [None] * len(cs)
    idx, refs, starts, los, his, flags = [], [], [], [], [], []
    for i, c in enumerate(cs):
        if not patch_in_bounds(img_l.shape, c.p_l, shape):
            out[i] = replace(c, flag=LEADER_OUT_OF_BOUNDS)
            continue
        lo, hi = feasible_box(img_f.shape, c.p_f0, cfg)
        if np.any(lo > hi):
            out[i] = replace(c, flag=INFEASIBLE)
            continue
        start = np.clip(np.asarray(c.p_f0, float), lo, hi)
        idx.append(i)
        refs.append(sample_patch(img_l, c.p_l, shape))
        starts.append(start)
        los.append(lo)
        his.append(hi)
        flags.append(OK if np.array_equal(start, c.p_f0) else CLAMPED_START)
    if not idx:
        return out
    refs = np.stack(refs)
    p = np.array(starts)
    lo, hi = np.array(los), np.array(his)
    best_p = p.copy()
    best = np.full(len(idx), np.inf)
    loss0 = None
    iters = np.zeros(len(idx), dtype=int)
    active = np.ones(len(idx), dtype=bool)
    for it in range(cfg.max_iter):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        score, grad = ssim_and_grad(refs[a], img_f, p[a])
        loss = 1.0 - score
        if loss0 is None:
            loss0 = loss.copy()
        better = loss < best[a]
        best[a[better]] = loss[better]
        best_p[a[better]] = p[a[better]]
        # descent on 1 - SSIM is ascent on SSIM
        new = np.clip(p[a] + cfg.eta * grad, lo[a], hi[a])
        step = np.linalg.norm(new - p[a], axis=1)
        p[a] = new
        iters[a] += 1
        active[a[step < cfg.tol]] = False
    # the final iterate has not been scored yet
    a = np.flatnonzero(active)
    if a.size:
        score = 1.0 - ssim_batch(refs[a], img_f, p[a])
        better = score < best[a]
        best[a[better]] = score[better]
        best_p[a[better]] = p[a[better]]
    for k, i in enumerate(idx):
        c = cs[i]
        out[i] = replace(c, p_f=tuple(best_p[k]), loss0=float(loss0[k]), loss=float(best[k]),
                         iters=int(iters[k]), flag=flags[k])
    return out

