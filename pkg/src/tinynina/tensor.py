"""Forward numeric kernels on dense float64 tensors.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Image tensors are
channel-major ``[C, H, W]``. Every function here is pure: inputs are never
modified and identical inputs give bit-identical outputs.
"""
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np

from . import backend
from .errors import ShapeError

__all__ = [
    "ConvParams",
    "as_tensor",
    "conv2d",
    "conv_output_size",
    "depthwise_conv2d",
    "pointwise_conv2d",
    "pixel_shuffle",
    "pixel_unshuffle",
    "global_avg_pool",
    "sigmoid",
    "relu",
    "concat_channels",
    "bicubic_resize",
    "resize_to",
    "cubic_kernel",
    "resample_table",
]

CATMULL_ROM_A = -0.5


def as_tensor(x, name="tensor"):
    a = np.asarray(x, dtype=backend.working_dtype())
    if a.size == 0:
        raise ShapeError(f"{name} is empty", dim=name, actual=a.shape)
    return a


def _image(x, name="input"):
    a = as_tensor(x, name)
    if a.ndim != 3:
        raise ShapeError(f"{name} must be [C, H, W], got shape {a.shape}",
                         dim="rank", expected=3, actual=a.ndim)
    return a


@dataclass(frozen=True)
class ConvParams:
    """Weights ``[C_out, C_in, k, k]``, bias ``[C_out]``, stride and zero padding."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        dt = backend.working_dtype()
        w = np.asarray(self.weights, dtype=dt)
        b = np.asarray(self.bias, dtype=dt)
        if w.ndim != 4:
            raise ShapeError(f"conv weights must be [C_out, C_in, k, k], got {w.shape}",
                             dim="weights.rank", expected=4, actual=w.ndim)
        if w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv kernel must be square, got {w.shape[2]}x{w.shape[3]}",
                             dim="k", expected=w.shape[2], actual=w.shape[3])
        if w.shape[2] % 2 != 1:
            raise ShapeError(f"conv kernel size must be odd, got {w.shape[2]}",
                             dim="k", actual=w.shape[2])
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match C_out={w.shape[0]}",
                             dim="C_out", expected=w.shape[0], actual=b.shape)
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be nonnegative, got {self.padding}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def k(self):
        return self.weights.shape[2]

    @property
    def c_in(self):
        return self.weights.shape[1]

    @property
    def c_out(self):
        return self.weights.shape[0]


def conv_output_size(n, k, stride, padding, dim="H"):
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"{dim}: ({n} + 2*{padding} - {k})/{stride} + 1 is not a positive integer",
            dim=dim, actual=n)
    return span // stride + 1


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def conv2d_raw(x, w, b, stride, padding):
    """Unchecked cross-correlation. Returns ``(out, cols)``; ``cols`` is None for 1x1."""
    c_out, c_in, k, _ = w.shape
    _, h, wd = x.shape
    ho = conv_output_size(h, k, stride, padding, "H")
    wo = conv_output_size(wd, k, stride, padding, "W")
    if k == 1 and stride == 1 and padding == 0:
        out = w.reshape(c_out, c_in) @ x.reshape(c_in, h * wd)
        cols = None
    else:
        cols = backend.im2col(_pad(x, padding), k, stride, ho, wo)
        out = w.reshape(c_out, -1) @ cols
    out += b[:, None]
    return out.reshape(c_out, ho, wo), cols


def conv2d(x, params):
    """Cross-correlation (no kernel flip) plus bias."""
    x = _image(x)
    if x.shape[0] != params.c_in:
        raise ShapeError(f"input has {x.shape[0]} channels, conv expects C_in={params.c_in}",
                         dim="C_in", expected=params.c_in, actual=x.shape[0])
    out, _ = conv2d_raw(x, params.weights, params.bias, params.stride, params.padding)
    return out


def pointwise_conv2d(x, params):
    if params.k != 1 or params.stride != 1 or params.padding != 0:
        raise ShapeError(f"pointwise conv needs k=1, stride=1, padding=0; got k={params.k}, "
                         f"stride={params.stride}, padding={params.padding}",
                         dim="k", expected=1, actual=params.k)
    return conv2d(x, params)


def _check_depthwise(x, kernels, bias, padding):
    x = _image(x)
    kernels = as_tensor(kernels, "kernels")
    bias = as_tensor(bias, "bias")
    if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        raise ShapeError(f"depthwise kernels must be [C, k, k], got {kernels.shape}",
                         dim="kernels", actual=kernels.shape)
    c = x.shape[0]
    if kernels.shape[0] != c:
        raise ShapeError(f"{kernels.shape[0]} depthwise kernels for {c} input channels",
                         dim="C", expected=c, actual=kernels.shape[0])
    if bias.shape != (c,):
        raise ShapeError(f"depthwise bias shape {bias.shape} for {c} channels",
                         dim="C", expected=c, actual=bias.shape)
    k = kernels.shape[1]
    if k % 2 != 1 or padding != (k - 1) // 2:
        raise ShapeError(f"depthwise conv needs odd k and padding (k-1)/2; got k={k}, "
                         f"padding={padding}", dim="padding", expected=(k - 1) // 2,
                         actual=padding)
    return x, kernels, bias


def depthwise_conv2d(x, kernels, bias, padding):
    """Per-channel spatial filtering; output channel c reads only input channel c."""
    x, kernels, bias = _check_depthwise(x, kernels, bias, padding)
    return backend.depthwise_forward(_pad(x, padding), kernels, bias)


def pixel_shuffle(x, r):
    """``[C*r*r, H, W] -> [C, H*r, W*r]``; input channel ``c*r*r + i*r + j``
    lands on output pixel ``(h*r + i, w*r + j)`` of channel ``c``."""
    x = _image(x)
    if r < 1:
        raise ValueError(f"upscale factor must be >= 1, got {r}")
    cr, h, w = x.shape
    if cr % (r * r):
        raise ShapeError(f"{cr} channels not divisible by r^2={r * r}",
                         dim="C", expected=f"multiple of {r * r}", actual=cr)
    c = cr // (r * r)
    return np.ascontiguousarray(
        x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2)).reshape(c, h * r, w * r)


def pixel_unshuffle(x, r):
    """Inverse of :func:`pixel_shuffle`."""
    x = _image(x)
    c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"spatial size {hr}x{wr} not divisible by r={r}",
                         dim="H" if hr % r else "W", actual=(hr, wr))
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        x.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3)).reshape(c * r * r, h, w)


def global_avg_pool(x):
    x = _image(x)
    # shifting by one pixel makes constant channels come back exactly
    shift = x[:, 0, 0]
    return shift + (x - shift[:, None, None]).mean(axis=(1, 2))


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    """Logistic function, kept strictly inside (0, 1) even where float64 saturates."""
    x = as_tensor(x, "x")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _SIG_LO, _SIG_HI)


def relu(x):
    x = as_tensor(x, "x")
    return np.maximum(x, 0.0)


def concat_channels(a, b):
    a = _image(a, "a")
    b = _image(b, "b")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"spatial sizes differ: {a.shape[1:]} vs {b.shape[1:]}",
                         dim="H" if a.shape[1] != b.shape[1] else "W",
                         expected=a.shape[1:], actual=b.shape[1:])
    return np.concatenate([a, b], axis=0)


def cubic_kernel(d, a=CATMULL_ROM_A):
    """Keys cubic convolution kernel; ``a=-0.5`` is Catmull-Rom."""
    d = abs(d)
    if d <= 1.0:
        return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0
    if d < 2.0:
        return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a
    return 0.0


@lru_cache(maxsize=256)
def resample_table(n_in, n_out):
    """Tap indices and weights ``([n_out, 4], [n_out, 4])`` for resizing one axis.

    Pixel centres are aligned (``src = (dst + 0.5) * n_in / n_out - 0.5``) and
    out-of-range taps are clamped to the border pixel.
    """
    idx = np.empty((n_out, 4), dtype=np.intp)
    wts = np.empty((n_out, 4), dtype=np.float64)
    ratio = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * ratio - 0.5
        base = math.floor(src)
        t = src - base
        for tap in range(4):
            idx[o, tap] = min(max(base - 1 + tap, 0), n_in - 1)
            wts[o, tap] = cubic_kernel(t - (tap - 1))
    idx.setflags(write=False)
    wts.setflags(write=False)
    return idx, wts


def scaled_size(n, scale, dim="H"):
    s = Fraction(scale).limit_denominator(10**6) if isinstance(scale, float) else Fraction(scale)
    if s <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    out = math.floor(n * s + Fraction(1, 2))
    if out < 1:
        raise ShapeError(f"{dim}: resizing {n} by {scale} gives an empty output",
                         dim=dim, actual=out)
    return out


def resize_to(x, ho, wo):
    """Separable Catmull-Rom resize of ``[C, H, W]`` to ``[C, ho, wo]``."""
    x = _image(x)
    if ho < 1 or wo < 1:
        raise ShapeError(f"degenerate output size {ho}x{wo}", dim="H" if ho < 1 else "W",
                         actual=(ho, wo))
    _, h, w = x.shape
    if ho != h:
        idx, wts = resample_table(h, ho)
        x = backend.resample_axis(x, idx, wts, 1)
    if wo != w:
        idx, wts = resample_table(w, wo)
        x = backend.resample_axis(x, idx, wts, 2)
    return np.array(x, copy=True) if (ho == h and wo == w) else x


def bicubic_resize(x, scale):
    """Resize by a rational ``scale``; output size is ``round(H * scale)``."""
    x = _image(x)
    _, h, w = x.shape
    return resize_to(x, scaled_size(h, scale, "H"), scaled_size(w, scale, "W"))
