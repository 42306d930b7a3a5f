"""Pure numpy implementation of the hot loops.

All arrays are NHWC and C-contiguous. Loops run over kernel taps only;
each tap is one strided slice of the whole batch.
"""
import numpy as np

NAME = "numpy"


def _tap(xp, dy, dx, stride, ho, wo):
    return xp[:, dy:dy + stride * (ho - 1) + 1:stride,
              dx:dx + stride * (wo - 1) + 1:stride, :]


def _zero_pad(x, pad_t, pad_l, hp, wp):
    n, h, w, c = x.shape
    if pad_t == 0 and pad_l == 0 and hp == h and wp == w:
        return x
    xp = np.zeros((n, hp, wp, c), dtype=x.dtype)
    xp[:, pad_t:pad_t + h, pad_l:pad_l + w, :] = x
    return xp


def _padded_extent(h, k, stride, pad, ho):
    return max(h + pad, (ho - 1) * stride + k)


def im2col(x, k, stride, pad_t, pad_l, ho, wo):
    n, h, w, c = x.shape
    hp = _padded_extent(h, k, stride, pad_t, ho)
    wp = _padded_extent(w, k, stride, pad_l, wo)
    xp = _zero_pad(x, pad_t, pad_l, hp, wp)
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, :, dy, dx, :] = _tap(xp, dy, dx, stride, ho, wo)
    return cols


def col2im(cols, h, w, stride, pad_t, pad_l):
    n, ho, wo, k, _, c = cols.shape
    hp = _padded_extent(h, k, stride, pad_t, ho)
    wp = _padded_extent(w, k, stride, pad_l, wo)
    dxp = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            _tap(dxp, dy, dx, stride, ho, wo)[...] += cols[:, :, :, dy, dx, :]
    return np.ascontiguousarray(dxp[:, pad_t:pad_t + h, pad_l:pad_l + w, :])


def depthwise_forward(x, w, mult, stride, pad_t, pad_l, ho, wo):
    k = w.shape[0]
    n, h, wd, c = x.shape
    if mult > 1:
        x = np.repeat(x, mult, axis=3)
    hp = _padded_extent(h, k, stride, pad_t, ho)
    wp = _padded_extent(wd, k, stride, pad_l, wo)
    xp = _zero_pad(x, pad_t, pad_l, hp, wp)
    out = np.zeros((n, ho, wo, c * mult), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            out += _tap(xp, dy, dx, stride, ho, wo) * w[dy, dx]
    return out


def depthwise_backward(x, w, dout, mult, stride, pad_t, pad_l):
    k = w.shape[0]
    n, h, wd, c = x.shape
    _, ho, wo, _ = dout.shape
    xr = np.repeat(x, mult, axis=3) if mult > 1 else x
    hp = _padded_extent(h, k, stride, pad_t, ho)
    wp = _padded_extent(wd, k, stride, pad_l, wo)
    xp = _zero_pad(xr, pad_t, pad_l, hp, wp)
    dxp = np.zeros((n, hp, wp, c * mult), dtype=x.dtype)
    dw = np.zeros_like(w)
    for dy in range(k):
        for dx in range(k):
            dw[dy, dx] = np.einsum("nhwc,nhwc->c", _tap(xp, dy, dx, stride, ho, wo), dout)
            _tap(dxp, dy, dx, stride, ho, wo)[...] += dout * w[dy, dx]
    dxr = dxp[:, pad_t:pad_t + h, pad_l:pad_l + wd, :]
    if mult > 1:
        dxr = dxr.reshape(n, h, wd, c, mult).sum(axis=4)
    return np.ascontiguousarray(dxr), dw


def maxpool_forward(x, k, stride, ho, wo):
    n, h, w, c = x.shape
    hp = max(h, (ho - 1) * stride + k)
    wp = max(w, (wo - 1) * stride + k)
    xp = np.full((n, hp, wp, c), -np.inf, dtype=x.dtype)
    xp[:, :h, :w, :] = x
    out = np.full((n, ho, wo, c), -np.inf, dtype=x.dtype)
    arg = np.zeros((n, ho, wo, c), dtype=np.int64)
    rows = (np.arange(ho) * stride)[:, None]
    cols = (np.arange(wo) * stride)[None, :]
    for dy in range(k):
        for dx in range(k):
            v = _tap(xp, dy, dx, stride, ho, wo)
            better = v > out  # strict: first tap in scan order wins ties
            out = np.where(better, v, out)
            idx = ((rows + dy) * w + (cols + dx))[None, :, :, None]
            arg = np.where(better, idx, arg)
    return out, arg


def maxpool_backward(dout, arg, h, w):
    n, ho, wo, c = dout.shape
    dx = np.zeros((n, h * w, c), dtype=dout.dtype)
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, None, None, :]
    np.add.at(dx, (np.broadcast_to(nn, arg.shape), arg, np.broadcast_to(cc, arg.shape)), dout)
    return dx.reshape(n, h, w, c)
