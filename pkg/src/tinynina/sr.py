"""Super-resolution training: Naive SR and Channel SR paradigms."""
from dataclasses import dataclass, field
import io
import logging

import numpy as np

from . import autograd as ag
from . import tensor as T
from .bands import BAND_ORDER, BandMap, Tile
from .config import TrainConfig
from .errors import NumericalError, ShapeError
from .fileio import Checkpoint, fmt_float
from .model import TinyNina, TinyNinaConfig, init_params
from .optim import adam_step, l1_loss, l2_penalty, lr_at
from .stats import compute_channel_stats, denormalize, normalize

log = logging.getLogger(__name__)

MODES = ("naive", "channel")
DEFAULT_SCALE = 2


def degrade_naive(tile, scale):
    """Bicubic downsampling of every channel by an integer factor."""
    x = np.asarray(getattr(tile, "bands", tile), dtype=np.float64)
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    _, h, w = x.shape
    if h % scale or w % scale:
        raise ShapeError(f"tile {h}x{w} not divisible by scale {scale}",
                         dim="H" if h % scale else "W", actual=(h, w))
    if scale == 1:
        return x.copy()
    return T.resize_to(x, h // scale, w // scale)


def naive_sr_loss(x_sr, x_target):
    """Mean absolute error over every channel and pixel."""
    return l1_loss(x_sr, x_target)


def channel_sr_loss(x_sr, x_input, band_map, params, lam):
    """L1 between each 20 m target channel of ``x_sr`` and its 10 m reference
    channel of ``x_input``, averaged over targets and pixels, plus ``lam * sum(w**2)``."""
    x_sr, x_input = ag.lift(x_sr), ag.lift(x_input)
    if x_sr.shape[1:] != x_input.shape[1:]:
        raise ShapeError(f"x_sr {x_sr.shape} and x_input {x_input.shape} not spatially aligned",
                         dim="H", expected=x_input.shape[1:], actual=x_sr.shape[1:])
    for ids in (band_map.band_ids,):
        if len(ids) != x_sr.shape[0] or len(ids) != x_input.shape[0]:
            raise ShapeError("band map does not match channel count", dim="C",
                             expected=len(ids), actual=(x_sr.shape[0], x_input.shape[0]))
    tgt, ref = band_map.index_pairs()
    data = l1_loss(ag.take(x_sr, tgt, axis=0), x_input.value[ref])
    if params is None or lam == 0.0:
        return data
    return ag.add(data, l2_penalty(params, lam))


@dataclass
class LossLog:
    """Per-epoch losses; epoch 0 is the untrained model."""

    rows: list = field(default_factory=list)

    def add(self, epoch, phase, loss):
        self.rows.append((epoch, phase, float(loss)))

    def series(self, phase):
        return [loss for _, p, loss in self.rows if p == phase]

    def to_csv(self):
        buf = io.StringIO()
        buf.write("epoch,phase,loss\n")
        for epoch, phase, loss in self.rows:
            buf.write(f"{epoch},{phase},{fmt_float(loss)}\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


class SRModel:
    """TinyNina weights plus the normalisation statistics and training mode."""

    def __init__(self, net, stats, mode, degrade_scale):
        self.net = net
        self.stats = stats
        self.mode = mode
        self.degrade_scale = degrade_scale

    def to_checkpoint(self):
        cfg = self.net.config.to_dict()
        cfg["mode"] = self.mode
        cfg["degrade_scale"] = str(self.degrade_scale)
        return Checkpoint("tinynina", cfg, self.net.params.copy(), self.stats)

    @classmethod
    def from_checkpoint(cls, ckpt):
        if ckpt.kind != "tinynina":
            raise ValueError(f"expected a tinynina checkpoint, got {ckpt.kind!r}")
        cfg = TinyNinaConfig.from_dict(ckpt.config)
        return cls(TinyNina(cfg, ckpt.params), ckpt.stats, ckpt.config.get("mode", "naive"),
                   int(ckpt.config.get("degrade_scale", cfg.scale)))


def sr_pair(x_norm, mode, scale):
    """Model input and target for one normalised tile."""
    if mode == "naive":
        return degrade_naive(x_norm, scale), x_norm
    return x_norm, x_norm


def sr_loss(net, mode, band_map, lam, x_in, target, with_penalty=True):
    out = net(x_in)
    if mode == "naive":
        return naive_sr_loss(out, target)
    return channel_sr_loss(out, x_in, band_map, net.params if with_penalty else None, lam)


def split_indices(n, val_fraction, seed):
    """Seeded shuffle of ``range(n)`` split into ``(train, val)``; val gets at least one."""
    if n < 2:
        raise ValueError(f"need at least 2 tiles to form train and validation splits, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(round(n * val_fraction))), n - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


@dataclass
class SRResult:
    model: SRModel
    log: LossLog
    best_epoch: int

    @property
    def checkpoint(self):
        return self.model.to_checkpoint()


def train_sr(mode, tiles, config=None, seed=0, scale=DEFAULT_SCALE, model_config=None,
             band_map=None, stats=None):
    """Train TinyNina under ``mode`` on ``tiles``; returns the best-validation model.

    Tiles are split 80/20 (seeded) and visited one at a time in a freshly
    shuffled order every epoch. They are normalised with ``stats`` if given,
    otherwise with statistics of the training part.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    config = config or TrainConfig()
    band_map = band_map or BandMap()
    tiles = [np.asarray(getattr(t, "bands", t), dtype=np.float64) for t in tiles]
    if not tiles:
        raise ValueError("empty training set")
    r = scale if mode == "naive" else 1
    base = model_config or TinyNinaConfig(in_channels=tiles[0].shape[0])
    net_cfg = TinyNinaConfig(**{**base.__dict__, "scale": r})

    train_idx, val_idx = split_indices(len(tiles), config.val_fraction, seed)
    if not train_idx or not val_idx:
        raise ValueError("empty train or validation split")
    if stats is None:
        stats = compute_channel_stats([tiles[i] for i in train_idx])
    pairs = [sr_pair(normalize(t, stats), mode, scale) for t in tiles]
    train = [pairs[i] for i in train_idx]
    val = [pairs[i] for i in val_idx]

    net = TinyNina(net_cfg, init_params(net_cfg, seed))
    adam = config.adam()
    schedule = config.schedule
    rng = np.random.default_rng([seed, 1])
    lam = config.lam if mode == "channel" else 0.0
    loss_log = LossLog()

    def evaluate(data):
        with ag.no_grad():
            return float(np.mean([sr_loss(net, mode, band_map, lam, x, y).item()
                                  for x, y in data]))

    best = evaluate(val)
    best_params, best_epoch = net.params.copy(), 0
    loss_log.add(0, "train", evaluate(train))
    loss_log.add(0, "val", best)
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(schedule, epoch - 1)
        total = 0.0
        for step, i in enumerate(rng.permutation(len(train))):
            x, y = train[i]
            loss = sr_loss(net, mode, band_map, lam, x, y)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"NaN/Inf loss at epoch {epoch}, step {step}")
            ag.backward(loss, net.params)
            adam_step(net.params, adam, lr)
            total += value
        val_loss = evaluate(val)
        loss_log.add(epoch, "train", total / len(train))
        loss_log.add(epoch, "val", val_loss)
        log.info("sr[%s] epoch %d lr=%.3g train=%.6f val=%.6f", mode, epoch, lr,
                 total / len(train), val_loss)
        if val_loss < best:
            best, best_epoch = val_loss, epoch
            best_params = net.params.copy()

    model = SRModel(TinyNina(net_cfg, best_params), stats, mode, scale)
    return SRResult(model, loss_log, best_epoch)


def identity_baseline_loss(tiles, stats, band_map=None):
    """Channel-SR data loss of the no-op model ``x_sr = x_input`` (normalised space)."""
    band_map = band_map or BandMap()
    vals = []
    for t in tiles:
        x = normalize(t, stats)
        vals.append(channel_sr_loss(x, x, band_map, None, 0.0).item())
    return float(np.mean(vals))


def super_resolve(model, tile):
    """Run a trained SR model on a raw tile; returns a denormalised :class:`Tile`."""
    if isinstance(model, Checkpoint):
        if model.stats is None:
            raise ValueError("checkpoint carries no channel statistics")
        model = SRModel.from_checkpoint(model)
    if model.stats is None:
        raise ValueError("SR model carries no channel statistics")
    x = np.asarray(getattr(tile, "bands", tile), dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != model.net.config.in_channels:
        raise ShapeError(f"tile shape {x.shape} does not match checkpoint with "
                         f"{model.net.config.in_channels} channels", dim="C",
                         expected=model.net.config.in_channels, actual=x.shape[0])
    out = model.net.predict(normalize(x, model.stats))
    ids = getattr(tile, "band_ids", BAND_ORDER)
    return Tile(denormalize(out, model.stats), ids)
