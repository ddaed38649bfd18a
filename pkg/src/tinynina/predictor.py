"""Desk-scale residual regressor for NO2 and its evaluation metrics.

stem 3x3 conv -> residual blocks (strided 3x3, 3x3, 1x1 skip) -> spectral
attention over feature channels -> global average pool -> concat month
embedding -> FC -> ReLU -> FC -> scalar.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
import logging
import math

import numpy as np

from . import autograd as ag
from .config import predictor_train_config
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .fileio import Checkpoint, fmt_float
from .model import init_uniform, spectral_attention
from .optim import adam_step, l2_penalty, lr_at, mse_loss
from .sr import LossLog, SRModel, split_indices, super_resolve
from .stats import compute_channel_stats, normalize

log = logging.getLogger(__name__)

N_MONTHS = 12


@dataclass(frozen=True)
class PredictorConfig:
    in_channels: int = 12
    stem_channels: int = 32
    num_res_blocks: int = 3
    embedding_size: int = 8
    hidden_fc: int = 64
    # prediction = target_mean + target_scale * network output
    target_mean: float = 0.0
    target_scale: float = 1.0

    def __post_init__(self):
        ints = (self.in_channels, self.stem_channels, self.num_res_blocks,
                self.embedding_size, self.hidden_fc)
        if min(ints) < 1:
            raise ConfigError("predictor sizes must all be >= 1")
        if not self.target_scale > 0.0 or not math.isfinite(self.target_mean):
            raise ConfigError("target_scale must be > 0 and target_mean finite")

    def to_dict(self):
        return {k: fmt_float(v) if isinstance(v, float) else str(v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = float(d[f.name]) if f.type in (float, "float") else int(d[f.name])
        return cls(**kw)


def predictor_shapes(config):
    c, s, e, hd = (config.in_channels, config.stem_channels, config.embedding_size,
                   config.hidden_fc)
    shapes = {"stem.weight": (s, c, 3, 3), "stem.bias": (s,)}
    for i in range(config.num_res_blocks):
        p = f"blocks.{i}."
        shapes[p + "conv1.weight"] = (s, s, 3, 3)
        shapes[p + "conv1.bias"] = (s,)
        shapes[p + "conv2.weight"] = (s, s, 3, 3)
        shapes[p + "conv2.bias"] = (s,)
        shapes[p + "skip.weight"] = (s, s, 1, 1)
        shapes[p + "skip.bias"] = (s,)
    shapes["attention.weight"] = (s,)
    shapes["attention.bias"] = (s,)
    shapes["season.weight"] = (N_MONTHS, e)
    shapes["fc1.weight"] = (hd, s + e)
    shapes["fc1.bias"] = (hd,)
    shapes["fc2.weight"] = (1, hd)
    shapes["fc2.bias"] = (1,)
    return shapes


class Predictor:
    kind = "predictor"

    def __init__(self, config, params, stats=None):
        expected = predictor_shapes(config)
        if set(expected) != set(params.names()):
            raise ShapeError(f"parameter names do not match config: "
                             f"{sorted(set(expected) ^ set(params.names()))}", dim="params")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: shape {params[name].shape}, expected {shape}",
                                 dim=name, expected=shape, actual=params[name].shape)
        self.config = config
        self.params = params
        self.stats = stats

    def __call__(self, x, month):
        return predictor_forward(self, x, month)

    def to_checkpoint(self):
        return Checkpoint(self.kind, self.config.to_dict(), self.params.copy(), self.stats)

    @classmethod
    def from_checkpoint(cls, ckpt):
        if ckpt.kind != cls.kind:
            raise ValueError(f"expected a predictor checkpoint, got {ckpt.kind!r}")
        return cls(PredictorConfig.from_dict(ckpt.config), ckpt.params, ckpt.stats)


def build_predictor(config=None, seed=0):
    config = config or PredictorConfig()
    return Predictor(config, init_uniform(predictor_shapes(config), seed))


def _check_month(month):
    if isinstance(month, bool) or int(month) != month or not 1 <= month <= N_MONTHS:
        raise ValueError(f"month must be an integer in 1..12, got {month!r}")
    return int(month)


def res_block(x, p, prefix):
    """Stride-2 residual block; the strided conv pads one row/col before and one after only
    for odd sizes, so output pixel ``o`` is centred on input pixel ``2o`` like the skip path."""
    _, h, w = x.shape
    xp = ag.pad2d(x, 1, h % 2, 1, w % 2)
    y = ag.relu(ag.conv2d(xp, p.var(prefix + "conv1.weight"), p.var(prefix + "conv1.bias"),
                          stride=2))
    y = ag.conv2d(y, p.var(prefix + "conv2.weight"), p.var(prefix + "conv2.bias"), padding=1)
    skip = ag.conv2d(ag.subsample(x, 2), p.var(prefix + "skip.weight"),
                     p.var(prefix + "skip.bias"))
    return ag.relu(ag.add(y, skip))


def predictor_forward(model, x, month):
    """Network output in standardised target units, shape ``()``."""
    month = _check_month(month)
    cfg, p = model.config, model.params
    x = ag.lift(x)
    if x.value.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ShapeError(f"input shape {x.shape}: expected {cfg.in_channels} channels",
                         dim="C", expected=cfg.in_channels, actual=x.shape)
    z = ag.relu(ag.conv2d(x, p.var("stem.weight"), p.var("stem.bias"), padding=1))
    for i in range(cfg.num_res_blocks):
        z = res_block(z, p, f"blocks.{i}.")
    _, z = spectral_attention(z, p.var("attention.weight"), p.var("attention.bias"))
    feats = ag.concat([ag.global_avg_pool(z), ag.embedding(p.var("season.weight"), month - 1)])
    hidden = ag.relu(ag.linear(feats, p.var("fc1.weight"), p.var("fc1.bias")))
    out = ag.linear(hidden, p.var("fc2.weight"), p.var("fc2.bias"))
    return ag.reshape(out, ())


def predict_no2(model, tile, month):
    """Predicted NO2 (ug/m3) for one tile; normalises with the model's stats when present."""
    x = np.asarray(getattr(tile, "bands", tile), dtype=np.float64)
    if model.stats is not None:
        x = normalize(x, model.stats)
    with ag.no_grad():
        raw = float(predictor_forward(model, x, month).value)
    value = model.config.target_mean + model.config.target_scale * raw
    if not math.isfinite(value):
        raise NumericalError(f"non-finite prediction {value}")
    return value


def metrics(predictions, truths):
    """``{"mse", "mae", "n"}`` over paired values."""
    pred = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truths, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError("predictions and truths differ in length", dim="n",
                         expected=truth.shape, actual=pred.shape)
    n = pred.size
    if n == 0:
        raise DataError("cannot evaluate on an empty dataset")
    err = pred - truth
    mse = float(np.sum(err * err) / n)
    mae = float(np.sum(np.abs(err)) / n)
    # Jensen: mae <= sqrt(mse). Checked on max-scaled errors since err**2 can underflow.
    peak = float(np.max(np.abs(err)))
    if peak > 0.0:
        u = np.abs(err) / peak
        assert np.mean(u) <= math.sqrt(np.mean(u * u)) * (1.0 + 1e-12), (mae, mse)
    return {"mse": mse, "mae": mae, "n": n}


def format_report(result):
    csv_line = f"{fmt_float(result['mse'])},{fmt_float(result['mae'])},{result['n']}"
    text = (f"MSE = {result['mse']:.4f} (ug/m3)^2\nMAE = {result['mae']:.4f} ug/m3\n"
            f"n   = {result['n']}")
    return csv_line, text


def _sorted_rows(manifest):
    return sorted(manifest.rows, key=lambda r: r.tile_path)


def _load(manifest, rows, sr_model):
    out = []
    for r in rows:
        tile = manifest.load_tile(r)
        out.append(super_resolve(sr_model, tile).bands if sr_model is not None else tile.bands)
    return out


def _as_sr(sr_checkpoint):
    if sr_checkpoint is None or isinstance(sr_checkpoint, SRModel):
        return sr_checkpoint
    return SRModel.from_checkpoint(sr_checkpoint)


def evaluate(model, dataset, sr_checkpoint=None, threads=1):
    """Metrics over every row of ``dataset``; tiles go through ``sr_checkpoint`` first if given."""
    rows = list(dataset.rows)
    if not rows:
        raise DataError("cannot evaluate on an empty manifest")
    missing = dataset.missing_truth()
    if missing:
        raise DataError(f"rows without ground truth: {missing}")
    sr = _as_sr(sr_checkpoint)

    def one(row):
        tile = dataset.load_tile(row)
        if sr is not None:
            tile = super_resolve(sr, tile)
        return predict_no2(model, tile, row.month)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            preds = list(pool.map(one, rows))
    else:
        preds = [one(r) for r in rows]
    return metrics(preds, [r.no2 for r in rows])


@dataclass
class PredictorResult:
    model: Predictor
    log: LossLog
    best_epoch: int

    @property
    def checkpoint(self):
        return self.model.to_checkpoint()


def train_predictor(sr_checkpoint, dataset, config=None, seed=0, val=None, model_config=None):
    """Fit the regressor on super-resolved tiles; returns the best-validation model.

    ``val`` is a separate validation manifest. Without it a seeded fraction of
    ``dataset`` is held out. Rows are sorted by path first, so the file order of
    the manifest has no effect.
    """
    config = config or predictor_train_config()
    for name, m in (("training", dataset), ("validation", val)):
        if m is not None and m.missing_truth():
            raise DataError(f"{name} manifest rows without ground truth: {m.missing_truth()}")
    rows = _sorted_rows(dataset)
    if not rows:
        raise DataError("empty training manifest")
    sr = _as_sr(sr_checkpoint)
    if val is None:
        tr_idx, va_idx = split_indices(len(rows), config.val_fraction, seed)
        train_rows, val_rows = [rows[i] for i in tr_idx], [rows[i] for i in va_idx]
        val_manifest = dataset
    else:
        train_rows, val_rows, val_manifest = rows, _sorted_rows(val), val
    if not train_rows or not val_rows:
        raise DataError("empty train or validation split")

    train_x = _load(dataset, train_rows, sr)
    val_x = _load(val_manifest, val_rows, sr)
    stats = compute_channel_stats(train_x)
    train_x = [normalize(x, stats) for x in train_x]
    val_x = [normalize(x, stats) for x in val_x]
    y_train = np.array([r.no2 for r in train_rows])
    y_val = np.array([r.no2 for r in val_rows])
    mean = float(y_train.mean())
    scale = float(y_train.std()) or 1.0

    base = model_config or PredictorConfig(in_channels=train_x[0].shape[0])
    cfg = PredictorConfig(**{**asdict(base), "target_mean": mean, "target_scale": scale})
    model = build_predictor(cfg, seed)
    model.stats = stats
    p = model.params
    adam = config.adam()
    rng = np.random.default_rng([seed, 2])
    loss_log = LossLog()
    months_tr = [r.month for r in train_rows]
    months_va = [r.month for r in val_rows]

    def val_mse(xs, months, ys):
        with ag.no_grad():
            preds = [mean + scale * float(predictor_forward(model, x, m).value)
                     for x, m, in zip(xs, months)]
        return float(np.mean((np.array(preds) - ys) ** 2))

    best = val_mse(val_x, months_va, y_val)
    best_params, best_epoch = p.copy(), 0
    loss_log.add(0, "train", val_mse(train_x, months_tr, y_train))
    loss_log.add(0, "val", best)
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(config.schedule, epoch - 1)
        total = 0.0
        for step, i in enumerate(rng.permutation(len(train_x))):
            target = np.asarray((y_train[i] - mean) / scale)
            loss = mse_loss(predictor_forward(model, train_x[i], months_tr[i]), target)
            if config.lam > 0.0:
                loss = ag.add(loss, l2_penalty(p, config.lam))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"NaN/Inf loss at epoch {epoch}, step {step}")
            ag.backward(loss, p)
            adam_step(p, adam, lr)
            total += value * scale * scale
        v = val_mse(val_x, months_va, y_val)
        loss_log.add(epoch, "train", total / len(train_x))
        loss_log.add(epoch, "val", v)
        log.info("predictor epoch %d lr=%.3g train=%.4f val=%.4f", epoch, lr,
                 total / len(train_x), v)
        if v < best:
            best, best_epoch = v, epoch
            best_params = p.copy()
    return PredictorResult(Predictor(cfg, best_params, stats), loss_log, best_epoch)


def predictor_param_count(model):
    return model.params.num_scalars()
