"""Channel-wise normalisation statistics."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

STATS_EPS = 1e-8


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = STATS_EPS

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("mean and std must be matching 1-D arrays", dim="C")
        if np.any(self.std <= 0.0):
            raise ValueError("channel std must be positive")

    @property
    def channels(self):
        return self.mean.shape[0]


def compute_channel_stats(tiles, eps=STATS_EPS):
    """Population mean and std per channel pooled over all tiles and pixels.

    ``std = sqrt(mean((x - mean)**2) + eps)``.
    """
    tiles = [np.asarray(getattr(t, "bands", t), dtype=np.float64) for t in tiles]
    if not tiles:
        raise ValueError("cannot compute channel statistics of an empty tile set")
    c = tiles[0].shape[0]
    for t in tiles:
        if t.ndim != 3 or t.shape[0] != c:
            raise ShapeError(f"tile shape {t.shape} inconsistent with {c} channels", dim="C")
    # per-tile partial sums are sorted so the result does not depend on tile order
    count = sum(t.shape[1] * t.shape[2] for t in tiles)
    sums = np.sort(np.stack([t.sum(axis=(1, 2)) for t in tiles]), axis=0)
    mean = sums.sum(axis=0) / count
    sq = np.sort(np.stack([((t - mean[:, None, None]) ** 2).sum(axis=(1, 2)) for t in tiles]),
                 axis=0)
    var = sq.sum(axis=0) / count
    return ChannelStats(mean, np.sqrt(var + eps), eps)


def normalize(tile, stats):
    x = np.asarray(getattr(tile, "bands", tile), dtype=np.float64)
    if x.shape[0] != stats.channels:
        raise ShapeError(f"tile has {x.shape[0]} channels, stats have {stats.channels}",
                         dim="C", expected=stats.channels, actual=x.shape[0])
    return (x - stats.mean[:, None, None]) / stats.std[:, None, None]


def denormalize(x, stats):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != stats.channels:
        raise ShapeError(f"tile has {x.shape[0]} channels, stats have {stats.channels}",
                         dim="C", expected=stats.channels, actual=x.shape[0])
    return x * stats.std[:, None, None] + stats.mean[:, None, None]
