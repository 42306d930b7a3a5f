"""Independent reference implementations used as test oracles.

Everything here is written with explicit Python loops over the definitions
and shares no code with the package's kernels.
"""
import math

import numpy as np


def conv2d_naive(x, k, b, stride=1, pad_top=0, pad_left=0, out_h=None, out_w=None):
    h, w, ci = x.shape
    kk, _, _, co = k.shape
    if out_h is None:
        out_h = (h - kk) // stride + 1
        out_w = (w - kk) // stride + 1
    out = np.zeros((out_h, out_w, co))
    for y in range(out_h):
        for xx in range(out_w):
            for o in range(co):
                acc = b[o]
                for dy in range(kk):
                    for dx in range(kk):
                        iy = y * stride + dy - pad_top
                        ix = xx * stride + dx - pad_left
                        if 0 <= iy < h and 0 <= ix < w:
                            for c in range(ci):
                                acc += x[iy, ix, c] * k[dy, dx, c, o]
                out[y, xx, o] = acc
    return out


def depthwise_naive(x, k, b, mult, stride=1, pad_top=0, pad_left=0, out_h=None, out_w=None):
    h, w, c = x.shape
    kk = k.shape[0]
    if out_h is None:
        out_h = (h - kk) // stride + 1
        out_w = (w - kk) // stride + 1
    out = np.zeros((out_h, out_w, c * mult))
    for ch in range(c):
        for j in range(mult):
            o = ch * mult + j
            for y in range(out_h):
                for xx in range(out_w):
                    acc = b[o]
                    for dy in range(kk):
                        for dx in range(kk):
                            iy = y * stride + dy - pad_top
                            ix = xx * stride + dx - pad_left
                            if 0 <= iy < h and 0 <= ix < w:
                                acc += x[iy, ix, ch] * k[dy, dx, o]
                    out[y, xx, o] = acc
    return out


def pointwise_naive(x, k, b):
    h, w, _ = x.shape
    out = np.zeros((h, w, k.shape[1]))
    for y in range(h):
        for xx in range(w):
            out[y, xx] = [b[o] + sum(x[y, xx, c] * k[c, o] for c in range(k.shape[0]))
                          for o in range(k.shape[1])]
    return out


def maxpool_naive(x, window, stride, out_h, out_w):
    h, w, c = x.shape
    out = np.zeros((out_h, out_w, c))
    for y in range(out_h):
        for xx in range(out_w):
            for ch in range(c):
                best = -math.inf
                for dy in range(window):
                    for dx in range(window):
                        iy, ix = y * stride + dy, xx * stride + dx
                        if iy < h and ix < w:
                            best = max(best, x[iy, ix, ch])
                out[y, xx, ch] = best
    return out


def lrn_naive(x, radius, k, alpha, beta):
    h, w, c = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for y in range(h):
        for xx in range(w):
            for ch in range(c):
                s = sum(x[y, xx, j] ** 2 for j in range(max(0, ch - radius), min(c, ch + radius + 1)))
                out[y, xx, ch] = x[y, xx, ch] / (k + alpha * s) ** beta
    return out


def fc_naive(x, w, b):
    n, m = w.shape
    return np.array([b[j] + sum(x[i] * w[i, j] for i in range(n)) for j in range(m)])


def pool_windows_brute(n, k, s, mode):
    """Count pooling windows by walking start positions."""
    count, start = 0, 0
    while True:
        if mode == "valid":
            if start + k > n:
                break
        else:
            if start >= n:
                break
            if count > 0 and start - s + k >= n:
                break  # previous window already reached the end
        count += 1
        start += s
    return count


# -- instrumented multiply counters --------------------------------------------

class Counter:
    def __init__(self):
        self.multiplies = 0


def general_conv_counted(x, k, counter):
    """Same-size convolution (zero padding, stride 1) that counts every multiply.

    Each (pixel, tap) step multiplies a C_I vector by a C_I x C_O matrix, i.e.
    C_I * C_O scalar multiplies, padding taps included.
    """
    h, w, ci = x.shape
    kk, _, _, co = k.shape
    p = kk // 2
    xp = np.zeros((h + 2 * p, w + 2 * p, ci))
    xp[p:p + h, p:p + w] = x
    out = np.zeros((h, w, co))
    for y in range(h):
        for xx in range(w):
            for dy in range(kk):
                for dx in range(kk):
                    out[y, xx] += xp[y + dy, xx + dx] @ k[dy, dx]
                    counter.multiplies += ci * co
    return out


def separable_conv_counted(x, dw, pw, counter):
    h, w, ci = x.shape
    kk = dw.shape[0]
    p = kk // 2
    xp = np.zeros((h + 2 * p, w + 2 * p, ci))
    xp[p:p + h, p:p + w] = x
    mid = np.zeros((h, w, ci))
    for y in range(h):
        for xx in range(w):
            for dy in range(kk):
                for dx in range(kk):
                    mid[y, xx] += xp[y + dy, xx + dx] * dw[dy, dx]
                    counter.multiplies += ci
    out = np.zeros((h, w, pw.shape[1]))
    for y in range(h):
        for xx in range(w):
            out[y, xx] = mid[y, xx] @ pw
            counter.multiplies += ci * pw.shape[1]
    return out


def scalar_general_count(h, w, ci, kk, co):
    """Fully scalar loop: one increment per multiply."""
    n = 0
    for _ in range(h * w):
        for _ in range(kk * kk):
            for _ in range(ci):
                for _ in range(co):
                    n += 1
    return n


def scalar_separable_count(h, w, ci, kk, co):
    n = 0
    for _ in range(h * w):
        for _ in range(kk * kk):
            for _ in range(ci):
                n += 1
        for _ in range(ci):
            for _ in range(co):
                n += 1
    return n


# -- finite differences --------------------------------------------------------

def numeric_grad(f, x, step=1e-4, coords=None):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    gflat = g.reshape(-1)
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
