"""Reference implementations written independently of the package code."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import orthogonal_procrustes
from scipy.ndimage import gaussian_filter, map_coordinates, shift as nd_shift

C1 = (255 * 0.01) ** 2
C2 = (255 * 0.03) ** 2


def ssim_loop(x, y, c1=C1, c2=C2):
    """Whole-patch SSIM of two single-channel patches, straight from the formula."""
    n = len(x) * len(x[0])
    sx = sy = 0.0
    for i in range(len(x)):
        for j in range(len(x[0])):
            sx += x[i][j]
            sy += y[i][j]
    mx, my = sx / n, sy / n
    vx = vy = cxy = 0.0
    for i in range(len(x)):
        for j in range(len(x[0])):
            a, b = x[i][j] - mx, y[i][j] - my
            vx += a * a
            vy += b * b
            cxy += a * b
    vx, vy, cxy = vx / n, vy / n, cxy / n
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim_map_loop(x, y, win=8):
    """Mean of every stride-1 window score, channels averaged."""
    x = np.atleast_3d(x)
    y = np.atleast_3d(y)
    H, W, C = x.shape
    per_channel = []
    for c in range(C):
        xs, ys = x[:, :, c].tolist(), y[:, :, c].tolist()
        vals = []
        for i in range(H - win + 1):
            for j in range(W - win + 1):
                vals.append(ssim_loop([r[j:j + win] for r in xs[i:i + win]],
                                      [r[j:j + win] for r in ys[i:i + win]]))
        per_channel.append(sum(vals) / len(vals))
    return sum(per_channel) / C


def ssim_map_np(x, y, win=8):
    """Vectorized windowed SSIM used where the loop oracle would be too slow."""
    x = np.atleast_3d(np.asarray(x, float))
    y = np.atleast_3d(np.asarray(y, float))
    out = []
    for c in range(x.shape[2]):
        a = sliding_window_view(x[:, :, c], (win, win))
        b = sliding_window_view(y[:, :, c], (win, win))
        ma, mb = a.mean((-1, -2)), b.mean((-1, -2))
        va = a.var((-1, -2))
        vb = b.var((-1, -2))
        cov = ((a - ma[..., None, None]) * (b - mb[..., None, None])).mean((-1, -2))
        s = (2 * ma * mb + C1) * (2 * cov + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2))
        out.append(s.mean())
    return float(np.mean(out))


def bilinear_patch(img, center, size):
    """Patch of ``size`` sampled around an (x, y) center with scipy's linear interpolation."""
    h, w = size
    img = np.atleast_3d(img)
    xs = center[0] + np.arange(w) - (w - 1) / 2
    ys = center[1] + np.arange(h) - (h - 1) / 2
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([map_coordinates(img[:, :, c], [yy, xx], order=1) for c in range(img.shape[2])],
                    -1)


def fd_grad(ref, img, center, h=1e-3):
    """Central differences of the windowed SSIM w.r.t. the patch center."""
    g = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        up = ssim_map_np(ref, bilinear_patch(img, np.asarray(center) + e, ref.shape[:2]))
        dn = ssim_map_np(ref, bilinear_patch(img, np.asarray(center) - e, ref.shape[:2]))
        g[k] = (up - dn) / (2 * h)
    return g


def smooth_image(rng, shape, sigma, channels=3, amplitude=45.0):
    noise = rng.standard_normal(tuple(shape) + (channels,))
    img = np.stack([gaussian_filter(noise[..., c], sigma, mode="wrap") for c in range(channels)], -1)
    img /= img.std(axis=(0, 1), keepdims=True)
    return np.clip(128.0 + amplitude * img, 0, 255)


def known_shift_pair(rng, shift, shape=(240, 320), sigma=14.0):
    """Leader image and a follower image translated by ``shift`` = (dx, dy) px."""
    lead = smooth_image(rng, shape, sigma)
    foll = np.stack([nd_shift(lead[..., c], (shift[1], shift[0]), order=3, mode="wrap")
                     for c in range(3)], -1)
    return lead, foll


def brute_force_pairs(leaders, followers, window):
    """Repeatedly take the globally closest unconsumed pair (ties by leader, then follower time)."""
    L = sorted(leaders)
    F = sorted(followers)
    out = []
    while True:
        best = None
        for a in L:
            for b in F:
                d = abs(a - b)
                if d <= window and (best is None or (d, a, b) < best):
                    best = (d, a, b)
        if best is None:
            return sorted((a, b) for a, b in out)
        out.append(best[1:])
        L.remove(best[1])
        F.remove(best[2])


def procrustes_rms(src, dst):
    """RMS after the best similarity transform mapping src onto dst."""
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    R, s = orthogonal_procrustes(a, b)
    scale = s / (a ** 2).sum()
    moved = scale * a @ R + md
    return float(np.sqrt(((moved - dst) ** 2).sum(1).mean()))


def rotation_angle_deg(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1) / 2
    return float(np.degrees(np.arccos(np.clip(c, -1, 1))))


def pnp_fixture(seed, n=20, outliers=6, noise=0.5):
    """Desk-scale PnP draw: pose, leader-frame points, follower pixels, outlier indices."""
    from posekit.geometry import CameraModel, RigidTransform, project_points
    rng = np.random.default_rng(seed)
    cam = CameraModel(600.0, 600.0, 320.0, 240.0, 640, 480)
    d = rng.normal(size=3)
    pose = RigidTransform.from_rotvec(rng.normal(0, 0.2, 3),
                                      d / np.linalg.norm(d) * rng.uniform(1.0, 2.0))
    Xc = np.column_stack([rng.uniform(-0.8, 0.8, n), rng.uniform(-0.6, 0.6, n),
                          rng.uniform(1.5, 2.5, n)])
    X = pose.inverse().apply(Xc)
    uv = project_points(cam, pose, X)[0] + rng.normal(0, noise, (n, 2))
    bad = rng.choice(n, outliers, replace=False)
    uv[bad] = rng.uniform([0, 0], [640, 480], (outliers, 2))
    return cam, pose, X, uv, bad
