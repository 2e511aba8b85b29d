"""Structural similarity between image patches.

All routines work on float intensity arrays shaped ``(H, W)`` or
``(H, W, C)`` with values on an 8-bit scale. Multi-channel inputs are
scored per channel and averaged.

The windowed score and its gradient with respect to a patch's (subpixel)
center share one compiled kernel, so losses reported by the refiner agree
with :func:`ssim_map` to the last bit.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import OutOfBoundsError, ShapeError


@dataclass(frozen=True)
class SsimConfig:
    k1: float = 0.01
    k2: float = 0.03
    window: int = 8
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("stabilising constants must be positive")

    @property
    def c1(self):
        return (self.dynamic_range * self.k1) ** 2

    @property
    def c2(self):
        return (self.dynamic_range * self.k2) ** 2


DEFAULT_SSIM = SsimConfig()


@dataclass(frozen=True)
class SsimStats:
    mu_x: float
    mu_y: float
    var_x: float
    var_y: float
    cov_xy: float


def as_image(a):
    """Return ``a`` as a float64 ``(H, W, C)`` array, validating C in {1, 3}."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ShapeError(f"expected HxW or HxWxC with C in (1, 3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError("empty patch")
    return a


def _pair(x, y):
    x, y = as_image(x), as_image(y)
    if x.shape != y.shape:
        raise ShapeError(f"patch shapes differ: {x.shape} vs {y.shape}")
    return x, y


def patch_stats(x, y):
    """Population statistics of two single-channel patches."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return SsimStats(mx, my, float(np.mean(dx * dx)), float(np.mean(dy * dy)),
                     float(np.mean(dx * dy)))


def _ssim_from_stats(s, c1, c2):
    num = (2 * s.mu_x * s.mu_y + c1) * (2 * s.cov_xy + c2)
    den = (s.mu_x ** 2 + s.mu_y ** 2 + c1) * (s.var_x + s.var_y + c2)
    return num / den


def ssim_window(x, y, cfg=DEFAULT_SSIM):
    """SSIM of two whole patches (one evaluation per channel, then averaged)."""
    x, y = _pair(x, y)
    vals = [_ssim_from_stats(patch_stats(x[:, :, c], y[:, :, c]), cfg.c1, cfg.c2)
            for c in range(x.shape[2])]
    return float(np.mean(vals))


@njit(cache=True, nogil=True)
def _window_kernel(x, y, win, c1, c2, want_grad, dsdy):
    """Mean windowed SSIM of (h, w, C) patches; fills dsdy if want_grad."""
    h, w, nc = x.shape
    nh, nw = h - win + 1, w - win + 1
    n = float(win * win)
    count = nh * nw * nc
    total = 0.0
    ii = np.zeros((5, h + 1, w + 1))
    coef = np.zeros((3, nh, nw))
    ci = np.zeros((3, nh + 1, nw + 1))
    for c in range(nc):
        for i in range(h):
            for j in range(w):
                xv = x[i, j, c]
                yv = y[i, j, c]
                ii[0, i + 1, j + 1] = xv + ii[0, i, j + 1] + ii[0, i + 1, j] - ii[0, i, j]
                ii[1, i + 1, j + 1] = yv + ii[1, i, j + 1] + ii[1, i + 1, j] - ii[1, i, j]
                ii[2, i + 1, j + 1] = xv * xv + ii[2, i, j + 1] + ii[2, i + 1, j] - ii[2, i, j]
                ii[3, i + 1, j + 1] = yv * yv + ii[3, i, j + 1] + ii[3, i + 1, j] - ii[3, i, j]
                ii[4, i + 1, j + 1] = xv * yv + ii[4, i, j + 1] + ii[4, i + 1, j] - ii[4, i, j]
        for a in range(nh):
            for b in range(nw):
                a2_, b2_ = a + win, b + win
                sx = ii[0, a2_, b2_] - ii[0, a, b2_] - ii[0, a2_, b] + ii[0, a, b]
                sy = ii[1, a2_, b2_] - ii[1, a, b2_] - ii[1, a2_, b] + ii[1, a, b]
                sxx = ii[2, a2_, b2_] - ii[2, a, b2_] - ii[2, a2_, b] + ii[2, a, b]
                syy = ii[3, a2_, b2_] - ii[3, a, b2_] - ii[3, a2_, b] + ii[3, a, b]
                sxy = ii[4, a2_, b2_] - ii[4, a, b2_] - ii[4, a2_, b] + ii[4, a, b]
                mx = sx / n
                my = sy / n
                vx = max(sxx / n - mx * mx, 0.0)
                vy = max(syy / n - my * my, 0.0)
                cxy = sxy / n - mx * my
                a1 = 2.0 * mx * my + c1
                a2 = 2.0 * cxy + c2
                b1 = mx * mx + my * my + c1
                b2 = vx + vy + c2
                s = (a1 * a2) / (b1 * b2)
                total += s
                if want_grad:
                    # dS/dy_k = (2/n) (alpha + beta x_k + gamma y_k) inside the window
                    b12 = b1 * b2
                    coef[0, a, b] = mx * (a2 - a1) / b12 + s * my * (1.0 / b2 - 1.0 / b1)
                    coef[1, a, b] = a1 / b12
                    coef[2, a, b] = -s / b2
        if want_grad:
            for q in range(3):
                for a in range(nh):
                    for b in range(nw):
                        ci[q, a + 1, b + 1] = (coef[q, a, b] + ci[q, a, b + 1]
                                               + ci[q, a + 1, b] - ci[q, a, b])
            scale = 2.0 / (n * count)
            for i in range(h):
                a_lo = max(i - win + 1, 0)
                a_hi = min(i, nh - 1) + 1
                for j in range(w):
                    b_lo = max(j - win + 1, 0)
                    b_hi = min(j, nw - 1) + 1
                    acc = 0.0
                    for q in range(3):
                        v = (ci[q, a_hi, b_hi] - ci[q, a_lo, b_hi]
                             - ci[q, a_hi, b_lo] + ci[q, a_lo, b_lo])
                        if q == 0:
                            acc += v
                        elif q == 1:
                            acc += v * x[i, j, c]
                        else:
                            acc += v * y[i, j, c]
                    dsdy[i, j, c] = scale * acc
    return total / count


@njit(cache=True, nogil=True)
def _sample_kernel(img, cx, cy, h, w, vals, dx, dy):
    """Bilinear patch sampling; every sample shares the same fractional offset."""
    H, W, nc = img.shape
    bx = cx - (w - 1) / 2.0
    by = cy - (h - 1) / 2.0
    x0 = int(np.floor(bx))
    y0 = int(np.floor(by))
    fx = bx - x0
    fy = by - y0
    # a patch touching the last row/column is sampled from the cell to its left
    if x0 + w > W - 1 and x0 >= 1:
        x0 -= 1
        fx = 1.0
    if y0 + h > H - 1 and y0 >= 1:
        y0 -= 1
        fy = 1.0
    for i in range(h):
        r0 = y0 + i
        r1 = min(r0 + 1, H - 1)
        for j in range(w):
            q0 = x0 + j
            q1 = min(q0 + 1, W - 1)
            for c in range(nc):
                i00 = img[r0, q0, c]
                i01 = img[r0, q1, c]
                i10 = img[r1, q0, c]
                i11 = img[r1, q1, c]
                top = i00 + fx * (i01 - i00)
                bot = i10 + fx * (i11 - i10)
                vals[i, j, c] = top + fy * (bot - top)
                dx[i, j, c] = (1.0 - fy) * (i01 - i00) + fy * (i11 - i10)
                dy[i, j, c] = bot - top


@njit(cache=True, nogil=True)
def _batch_kernel(refs, img, centers, win, c1, c2, want_grad, scores, grads):
    k, h, w, nc = refs.shape
    vals = np.empty((h, w, nc))
    dx = np.empty((h, w, nc))
    dy = np.empty((h, w, nc))
    dsdy = np.zeros((h, w, nc))
    for t in range(k):
        _sample_kernel(img, centers[t, 0], centers[t, 1], h, w, vals, dx, dy)
        scores[t] = _window_kernel(refs[t], vals, win, c1, c2, want_grad, dsdy)
        if want_grad:
            gx = 0.0
            gy = 0.0
            for i in range(h):
                for j in range(w):
                    for c in range(nc):
                        gx += dsdy[i, j, c] * dx[i, j, c]
                        gy += dsdy[i, j, c] * dy[i, j, c]
            grads[t, 0] = gx
            grads[t, 1] = gy


def ssim_map(x, y, cfg=DEFAULT_SSIM):
    """Mean SSIM over all fully contained, stride-1 ``cfg.window`` windows."""
    x, y = _pair(x, y)
    if x.shape[0] < cfg.window or x.shape[1] < cfg.window:
        raise ShapeError(f"patch {x.shape[:2]} smaller than window {cfg.window}")
    dummy = np.zeros((1, 1, 1))
    return float(_window_kernel(np.ascontiguousarray(x), np.ascontiguousarray(y),
                                cfg.window, cfg.c1, cfg.c2, False, dummy))


def patch_grid(shape):
    """Column and row offsets of a patch of ``shape`` relative to its center."""
    h, w = shape
    return np.arange(w) - (w - 1) / 2.0, np.arange(h) - (h - 1) / 2.0


def patch_in_bounds(img_shape, center, shape):
    h, w = shape
    x, y = center
    hx, hy = (w - 1) / 2.0, (h - 1) / 2.0
    return (x - hx >= 0 and y - hy >= 0 and x + hx <= img_shape[1] - 1
            and y + hy <= img_shape[0] - 1)


def _check_centers(img_shape, centers, shape):
    for c in centers:
        if not patch_in_bounds(img_shape, c, shape):
            raise OutOfBoundsError(f"patch of size {shape} at {tuple(c)} leaves the image",
                                   center=[float(v) for v in c])


def sample_patches(img, centers, shape):
    """Bilinearly sample patches of ``shape`` centered at each of ``centers``.

    ``img`` is (H, W, C); ``centers`` is (K, 2) in (x, y) pixel coordinates.
    Returns an array (K, h, w, C).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    _check_centers(img.shape, centers, shape)
    h, w = shape
    out = np.empty((len(centers), h, w, img.shape[2]))
    dx = np.empty((h, w, img.shape[2]))
    dy = np.empty_like(dx)
    for t, (cx, cy) in enumerate(centers):
        _sample_kernel(img, cx, cy, h, w, out[t], dx, dy)
    return out


def sample_patch(img, center, shape):
    return sample_patches(as_image(img), [center], shape)[0]


def ssim_grad(ref, img, center, cfg=DEFAULT_SSIM):
    """Gradient of ``ssim_map(ref, patch_at(center))`` w.r.t. (center_x, center_y).

    ``patch_at`` samples ``img`` bilinearly on a grid the size of ``ref``.
    Bilinear sampling is only piecewise smooth, so where sample points fall
    exactly on integer coordinates the result is a one-sided derivative.
    """
    ref = as_image(ref)
    img = as_image(img)
    if ref.shape[2] != img.shape[2]:
        raise ShapeError("channel counts differ")
    if ref.shape[0] < cfg.window or ref.shape[1] < cfg.window:
        raise ShapeError(f"patch {ref.shape[:2]} smaller than window {cfg.window}")
    _, grad = ssim_and_grad(ref[None], img, np.asarray(center, float)[None], cfg)
    return grad[0]


def _run_batch(refs, img, centers, cfg, want_grad):
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    img = np.ascontiguousarray(img, dtype=np.float64)
    centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=np.float64)
    _check_centers(img.shape, centers, refs.shape[1:3])
    scores = np.empty(len(refs))
    grads = np.zeros((len(refs), 2))
    _batch_kernel(refs, img, centers, cfg.window, cfg.c1, cfg.c2, want_grad,
                  scores, grads)
    return scores, grads


def ssim_and_grad(refs, img, centers, cfg=DEFAULT_SSIM):
    """Batched windowed SSIM of ``refs`` (K, h, w, C) against patches of ``img``
    sampled at ``centers`` (K, 2), with gradients (K, 2) w.r.t. the centers."""
    return _run_batch(refs, img, centers, cfg, True)


def ssim_batch(refs, img, centers, cfg=DEFAULT_SSIM):
    return _run_batch(refs, img, centers, cfg, False)[0]
