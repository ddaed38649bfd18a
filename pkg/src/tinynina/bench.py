"""Inference timing: TinyNina versus a plain convolution stack of ~1M parameters."""
from dataclasses import dataclass
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import autograd as ag
from .model import init_uniform, param_count
from .synth import synth_tile
from .tensor import conv2d_raw, pixel_shuffle, relu

# published ratios, shown for context only
REPORTED_SPEEDUPS = {"vs EDSR": 47.0, "vs RCAN": 28.0, "vs NinaB1": 2.6}


def heavy_shapes(in_channels=12, width=128, depth=6, scale=2):
    """3x3 conv C->width, ``depth`` x (width->width), width->C*r^2, then pixel shuffle."""
    shapes = {"head.weight": (width, in_channels, 3, 3), "head.bias": (width,)}
    for i in range(depth):
        shapes[f"body.{i}.weight"] = (width, width, 3, 3)
        shapes[f"body.{i}.bias"] = (width,)
    shapes["tail.weight"] = (in_channels * scale * scale, width, 3, 3)
    shapes["tail.bias"] = (in_channels * scale * scale,)
    return shapes


class HeavyReference:
    kind = "heavy"

    def __init__(self, params, depth, scale):
        self.params = params
        self.depth = depth
        self.scale = scale

    @classmethod
    def build(cls, in_channels=12, width=128, depth=6, scale=2, seed=0):
        return cls(init_uniform(heavy_shapes(in_channels, width, depth, scale), seed),
                   depth, scale)

    def predict(self, x):
        p = self.params
        z = relu(conv2d_raw(x, p["head.weight"], p["head.bias"], 1, 1)[0])
        for i in range(self.depth):
            z = relu(conv2d_raw(z, p[f"body.{i}.weight"], p[f"body.{i}.bias"], 1, 1)[0])
        z = conv2d_raw(z, p["tail.weight"], p["tail.bias"], 1, 1)[0]
        return pixel_shuffle(z, self.scale)

    def param_count(self):
        return self.params.num_scalars()


def bench_tile(seed, index, size):
    """Tile ``index`` of the benchmark set; regenerated on demand so memory stays flat."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    return synth_tile(rng, size, size)[0].bands


@dataclass
class Timing:
    name: str
    params: int
    tiles: int
    seconds: list

    @property
    def median_ms(self):
        return 1000.0 * float(np.median(self.seconds))

    @property
    def p95_ms(self):
        return 1000.0 * float(np.percentile(self.seconds, 95))

    @property
    def tiles_per_s(self):
        return len(self.seconds) / float(np.sum(self.seconds))

    def line(self):
        return (f"{self.name}: params={self.params} tiles={self.tiles} "
                f"tiles/s={self.tiles_per_s:.3f} median_ms={self.median_ms:.2f} "
                f"p95_ms={self.p95_ms:.2f}")


def time_model(name, predict, params, indices, seed, size, warmup=2):
    """Single-threaded wall time of ``predict`` per tile; tile synthesis is not timed."""
    seconds = []
    with threadpool_limits(limits=1), ag.no_grad():
        for i in indices[:warmup]:
            predict(bench_tile(seed, i, size))
        for i in indices:
            x = bench_tile(seed, i, size)
            t0 = time.perf_counter()
            predict(x)
            seconds.append(time.perf_counter() - t0)
    return Timing(name, params, len(indices), seconds)


@dataclass
class BenchResult:
    tiny: Timing
    heavy: Timing | None

    @property
    def speedup(self):
        if self.heavy is None:
            return None
        return self.heavy.median_ms / self.tiny.median_ms

    def report(self):
        lines = [self.tiny.line()]
        if self.heavy is not None:
            lines.append(self.heavy.line())
            lines.append(f"speedup (median ms/tile, heavy / tinynina) = {self.speedup:.2f}x")
            lines.append("reported in the literature for comparison only: "
                         + ", ".join(f"{k} {v:g}x" for k, v in REPORTED_SPEEDUPS.items()))
        return "\n".join(lines)


def run_benchmark(model, n_tiles=500, size=200, seed=0, warmup=2, heavy_tiles=20,
                  heavy=True):
    """Time ``model`` on ``n_tiles`` and, optionally, the heavy stack on the first ``heavy_tiles``."""
    if n_tiles < 1:
        raise ValueError("n_tiles must be >= 1")
    indices = list(range(n_tiles))
    total, _ = param_count(model)
    tiny = time_model("tinynina", model.predict, total, indices, seed, size, warmup)
    ref = None
    if heavy and heavy_tiles > 0:
        h = HeavyReference.build(model.config.in_channels, scale=model.config.scale, seed=seed)
        ref = time_model("heavy_reference", h.predict, h.param_count(),
                         indices[:min(heavy_tiles, n_tiles)], seed, size, warmup)
    return BenchResult(tiny, ref)
