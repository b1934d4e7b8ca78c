"""Slow, obviously-correct reference implementations used only by tests."""
import math

import numpy as np


def conv2d_direct(x, w, b, stride=1, pad=0, dil=1, groups=1):
    n, c, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho = (h + 2 * pad - dil * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * pad - dil * (k - 1) - 1) // stride + 1
    cog = cout // groups
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for bi in range(n):
        for o in range(cout):
            g = o // cog
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cg):
                        for ky in range(k):
                            for kx in range(k):
                                iy = oy * stride - pad + ky * dil
                                ix = ox * stride - pad + kx * dil
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += float(x[bi, g * cg + ci, iy, ix]) * float(w[o, ci, ky, kx])
                    out[bi, o, oy, ox] = acc
    return out


def bilinear_up2_direct(x):
    """Scalar half-pixel bilinear x2 with edge clamp."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w))

    def taps(o, size):
        src = min(max((o + 0.5) / 2 - 0.5, 0.0), size - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, size - 1)
        return i0, i1, src - i0

    for oy in range(2 * h):
        y0, y1, fy = taps(oy, h)
        for ox in range(2 * w):
            x0, x1, fx = taps(ox, w)
            out[:, :, oy, ox] = (
                (1 - fy) * ((1 - fx) * x[:, :, y0, x0] + fx * x[:, :, y0, x1])
                + fy * ((1 - fx) * x[:, :, y1, x0] + fx * x[:, :, y1, x1])
            )
    return out


def batchnorm_direct(x, gamma, beta, eps):
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = ((x - mean) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma[None, :, None, None] + beta[None, :, None, None]


def batchnorm_infer_direct(x, gamma, beta, mean, var, eps):
    """Element-by-element inference-mode batchnorm from stored statistics."""
    out = np.zeros(x.shape)
    for idx in np.ndindex(*x.shape):
        c = idx[1]
        out[idx] = (float(x[idx]) - float(mean[c])) / math.sqrt(float(var[c]) + eps) * float(gamma[c]) + float(beta[c])
    return out


def numeric_grad(f, x, eps=1e-6, indices=None):
    """Central differences of scalar f at x (float64), optionally at a subset of flat indices."""
    x = x.astype(np.float64).copy()
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    g = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g.reshape(x.shape)


def rel_err(a, b, floor=1e-6):
    """Max abs difference relative to the larger gradient magnitude (floored for all-zero gradients)."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), floor))


def gaussian_blur_2d_direct(img, sigma):
    """Full 2-D Gaussian with clamp-to-edge, no separability assumed."""
    r = int(math.ceil(3 * sigma))
    h, w = img.shape[:2]
    xs = np.arange(-r, r + 1)
    k2 = np.exp(-(xs[:, None] ** 2 + xs[None, :] ** 2) / (2 * sigma * sigma))
    k2 /= k2.sum()
    out = np.zeros(img.shape, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = np.zeros(img.shape[2:])
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc += k2[dy + r, dx + r] * img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)]
            out[y, x] = acc
    return out


def catmull_rom(t):
    a = -0.5
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def bicubic_direct(img, th, tw):
    """Scalar Catmull-Rom resample, half-pixel centres, clamped taps."""
    h, w = img.shape[:2]
    out = np.zeros((th, tw) + img.shape[2:])
    for oy in range(th):
        sy = (oy + 0.5) * h / th - 0.5
        y0 = math.floor(sy)
        for ox in range(tw):
            sx = (ox + 0.5) * w / tw - 0.5
            x0 = math.floor(sx)
            acc = 0.0
            for m in range(-1, 3):
                wy = catmull_rom(sy - (y0 + m))
                yy = min(max(y0 + m, 0), h - 1)
                for n in range(-1, 3):
                    wx = catmull_rom(sx - (x0 + n))
                    xx = min(max(x0 + n, 0), w - 1)
                    acc = acc + wy * wx * img[yy, xx]
            out[oy, ox] = acc
    return out
