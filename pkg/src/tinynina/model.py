"""The TinyNina super-resolution network.

Pipeline: spectral attention gate -> 1x1 embedding (C -> F) -> K depthwise
separable blocks -> two-branch upsampling head fused by a 1x1 convolution.
"""
from dataclasses import asdict, dataclass, fields
import math

import numpy as np

from . import autograd as ag
from .autograd import ParamSet
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class TinyNinaConfig:
    in_channels: int = 12
    feature_channels: int = 64
    num_blocks: int = 3
    scale: int = 2
    out_channels: int = 0  # 0 means "same as in_channels"
    embedding: str = "auto"  # auto | on | off; auto = on iff feature_channels != in_channels

    def __post_init__(self):
        if self.out_channels == 0:
            object.__setattr__(self, "out_channels", self.in_channels)
        if min(self.in_channels, self.feature_channels, self.out_channels) < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.num_blocks < 0:
            raise ConfigError("num_blocks must be >= 0")
        if self.scale not in (1, 2):
            raise ConfigError(f"scale must be 1 or 2, got {self.scale}")
        if self.embedding not in ("auto", "on", "off"):
            raise ConfigError(f"embedding must be auto|on|off, got {self.embedding!r}")
        if not self.has_embedding and self.feature_channels != self.in_channels:
            raise ConfigError("embedding=off requires feature_channels == in_channels")

    @property
    def has_embedding(self):
        if self.embedding == "auto":
            return self.feature_channels != self.in_channels
        return self.embedding == "on"

    def to_dict(self):
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = d[f.name] if f.type in (str, "str") else int(d[f.name])
        return cls(**kw)


def param_shapes(config):
    """Ordered ``name -> shape`` map for every trainable tensor."""
    c, f, co, r = config.in_channels, config.feature_channels, config.out_channels, config.scale
    shapes = {
        "attention.weight": (c,),
        "attention.bias": (c,),
    }
    if config.has_embedding:
        shapes["embed.weight"] = (f, c, 1, 1)
        shapes["embed.bias"] = (f,)
    for i in range(config.num_blocks):
        shapes[f"blocks.{i}.dw.weight"] = (f, 3, 3)
        shapes[f"blocks.{i}.dw.bias"] = (f,)
        shapes[f"blocks.{i}.pw.weight"] = (f, f, 1, 1)
        shapes[f"blocks.{i}.pw.bias"] = (f,)
    shapes["head.low.weight"] = (f, f, 1, 1)
    shapes["head.low.bias"] = (f,)
    shapes["head.high.weight"] = (co * r * r, f, 3, 3)
    shapes["head.high.bias"] = (co * r * r,)
    shapes["head.fusion.weight"] = (co, f + co, 1, 1)
    shapes["head.fusion.bias"] = (co,)
    return shapes


def fan_in(name, shape):
    if name.endswith(".dw.weight"):
        return shape[1] * shape[2]
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 2:
        return shape[1]
    return 1


def init_uniform(shapes, seed):
    """Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero; drawn in name order."""
    rng = np.random.default_rng(seed)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(1.0 / fan_in(name, shape))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return ParamSet(params)


def init_params(config, seed):
    return init_uniform(param_shapes(config), seed)


class TinyNina:
    """A configuration bound to its parameters."""

    kind = "tinynina"

    def __init__(self, config, params):
        expected = param_shapes(config)
        missing = set(expected) ^ set(params.names())
        if missing:
            raise ShapeError(f"parameter names do not match config: {sorted(missing)}",
                             dim="params")
        for name, shape in expected.items():
            if params[name].shape != tuple(shape):
                raise ShapeError(f"{name}: shape {params[name].shape}, expected {shape}",
                                 dim=name, expected=shape, actual=params[name].shape)
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config=None, seed=0):
        config = config or TinyNinaConfig()
        return cls(config, init_params(config, seed))

    def __call__(self, x):
        return forward(self, x)

    def predict(self, x):
        """Inference on a plain array; returns an array."""
        with ag.no_grad():
            return forward(self, x).value


def spectral_attention(x, weight, bias):
    """Per-channel gate ``alpha_c = sigmoid(w_c * mean(x_c) + b_c)``; returns ``(alpha, gated)``."""
    x, weight, bias = ag.lift(x), ag.lift(weight), ag.lift(bias)
    c = x.shape[0]
    if weight.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"attention gate sized {weight.shape[0]} for {c} channels",
                         dim="C", expected=c, actual=weight.shape)
    pooled = ag.global_avg_pool(x)
    alpha = ag.sigmoid(ag.add(ag.mul(weight, pooled), bias))
    gated = ag.mul(x, ag.reshape(alpha, (c, 1, 1)))
    return alpha, gated


def ds_block(x, dw_weight, dw_bias, pw_weight, pw_bias):
    """``d = depthwise(x); return d + pointwise(d)``."""
    d = ag.depthwise_conv2d(x, dw_weight, dw_bias, padding=1)
    return ag.add(d, ag.conv2d(d, pw_weight, pw_bias))


def upsample_head(z, low_w, low_b, high_w, high_b, fusion_w, fusion_b, r):
    """Low-frequency 1x1 branch and pixel-shuffled 3x3 branch, fused by a 1x1 conv."""
    if r not in (1, 2):
        raise ValueError(f"upsampling factor must be 1 or 2, got {r}")
    z = ag.lift(z)
    _, h, w = z.shape
    f_low = ag.conv2d(z, low_w, low_b)
    if r != 1:
        f_low = ag.resize_to(f_low, h * r, w * r)
    f_high = ag.pixel_shuffle(ag.conv2d(z, high_w, high_b, padding=1), r)
    return ag.conv2d(ag.concat_channels(f_low, f_high), fusion_w, fusion_b)


def forward(model, x):
    cfg, p = model.config, model.params
    x = ag.lift(x)
    if x.value.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ShapeError(f"input shape {x.shape}: expected {cfg.in_channels} channels",
                         dim="C", expected=cfg.in_channels,
                         actual=x.shape[0] if x.value.ndim else None)
    _, z = spectral_attention(x, p.var("attention.weight"), p.var("attention.bias"))
    if cfg.has_embedding:
        z = ag.conv2d(z, p.var("embed.weight"), p.var("embed.bias"))
    for i in range(cfg.num_blocks):
        pre = f"blocks.{i}."
        z = ds_block(z, p.var(pre + "dw.weight"), p.var(pre + "dw.bias"),
                     p.var(pre + "pw.weight"), p.var(pre + "pw.bias"))
    return upsample_head(
        z,
        p.var("head.low.weight"), p.var("head.low.bias"),
        p.var("head.high.weight"), p.var("head.high.bias"),
        p.var("head.fusion.weight"), p.var("head.fusion.bias"),
        cfg.scale,
    )


def component_of(name):
    parts = name.split(".")
    if parts[0] == "blocks":
        return ".".join(parts[:3])
    if parts[0] == "head":
        return ".".join(parts[:2])
    return parts[0]


def param_count(model):
    """Return ``(total, {component: count})`` over the model's trainable scalars."""
    breakdown = {}
    for name, value in model.params.items():
        key = component_of(name)
        breakdown[key] = breakdown.get(key, 0) + value.size
    return sum(breakdown.values()), breakdown
