"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Loop and accumulation orders are kept identical between the two so that the
forward kernels produce bit-identical results on either backend.

Arrays are C-contiguous float64 (long double under extended precision); image
tensors are ``[C, H, W]``.
"""
import numpy as np

NAME = "python"


def im2col(xp, k, stride, ho, wo):
    """Unfold padded input ``[C, Hp, Wp]`` into ``[C*k*k, ho*wo]`` patch columns."""
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * (ho - 1) + 1:stride,
                               j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(c * k * k, ho * wo)


def col2im(cols, c, hp, wp, k, stride, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add columns back into ``[C, hp, wp]``."""
    out = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += cols[:, i, j]
    return out


def depthwise_forward(xp, w, b):
    c, hp, wp = xp.shape
    k = w.shape[1]
    h, wd = hp - k + 1, wp - k + 1
    out = np.empty((c, h, wd), dtype=xp.dtype)
    out[...] = b[:, None, None]
    for i in range(k):
        for j in range(k):
            out += w[:, i, j, None, None] * xp[:, i:i + h, j:j + wd]
    return out


def depthwise_backward(xp, w, gout):
    """Return ``(grad wrt padded input, grad wrt kernels)``."""
    c, h, wd = gout.shape
    k = w.shape[1]
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + h, j:j + wd] += w[:, i, j, None, None] * gout
            gw[:, i, j] = np.einsum("chw,chw->c", gout, xp[:, i:i + h, j:j + wd])
    return gxp, gw


def resample_axis(x, idx, wts, axis):
    """4-tap resampling of ``x [C, H, W]`` along ``axis`` (1 or 2)."""
    acc = wts[:, 0] * _take(x, idx[:, 0], axis) if axis == 2 else \
        wts[:, 0, None] * _take(x, idx[:, 0], axis)
    for t in range(1, idx.shape[1]):
        if axis == 2:
            acc = acc + wts[:, t] * _take(x, idx[:, t], axis)
        else:
            acc = acc + wts[:, t, None] * _take(x, idx[:, t], axis)
    return np.ascontiguousarray(acc)


def resample_axis_T(g, idx, wts, n_in, axis):
    """Adjoint of :func:`resample_axis`."""
    shape = list(g.shape)
    shape[axis] = n_in
    out = np.zeros(shape, dtype=g.dtype)
    moved = np.moveaxis(out, axis, 0)
    gm = np.moveaxis(g, axis, 0)
    for t in range(idx.shape[1]):
        wt = wts[:, t].reshape((-1,) + (1,) * (g.ndim - 1))
        np.add.at(moved, idx[:, t], wt * gm)
    return out


def _take(x, index, axis):
    return np.take(x, index, axis=axis)
