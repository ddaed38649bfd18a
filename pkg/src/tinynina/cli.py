"""Command-line entry point: ``tinynina <command> [options]``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numerical abort. Reports go to stdout, logs to stderr.
"""
import argparse
from collections import Counter
import logging
from pathlib import Path
import sys
import time

import numpy as np

from . import autograd as ag
from . import backend
from .bands import BandMap, bands_of_class
from .bench import run_benchmark
from .config import (PREDICTOR_EPOCHS, SR_EPOCHS, TrainConfig, load_run_config,
                     predictor_train_config)
from .errors import ConfigError, NumericalError, TinyNinaError
from .fileio import (Manifest, ManifestRow, ensure_dir, load_checkpoint, read_manifest,
                     read_tile, save_checkpoint, write_manifest, write_tile)
from .model import TinyNina, TinyNinaConfig, param_count
from .predictor import (PredictorConfig, Predictor, build_predictor, evaluate, format_report,
                        predict_no2, predictor_forward, train_predictor)
from .split import split_dataset
from .sr import SRModel, super_resolve, train_sr
from .stats import compute_channel_stats
from .synth import DEFAULT_NOISE_SIGMA, synth_generate

log = logging.getLogger("tinynina")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
DESK_SR_EPOCHS = 20
MAE_FACTOR = 1.5


class UsageError(TinyNinaError):
    pass


def _setting(args, key, default):
    """Flag value, else config-file value, else ``default``."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return args.run_config.get(key, default)


def _manifest(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    return read_manifest(p)


def _checkpoint(path, kind=None):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    ckpt = load_checkpoint(p)
    if kind is not None and ckpt.kind != kind:
        raise UsageError(f"{p} is a {ckpt.kind} checkpoint, expected {kind}")
    return ckpt


def _summary(manifest):
    rows = manifest.rows
    quarters = Counter(r.quarter for r in rows)
    urban = sum(r.region == "urban" for r in rows) / len(rows)
    q = " ".join(f"Q{k}={quarters.get(k, 0)}" for k in (1, 2, 3, 4))
    return f"tiles={len(rows)} urban_fraction={urban:.3f} {q}"


# ---------------------------------------------------------------- commands

def generate_dataset(out, tiles, size, seed, noise_sigma):
    manifest = synth_generate(tiles, size, size, seed, noise_sigma, out)
    splits = split_dataset(manifest, seed)
    for name, m in splits.items():
        write_manifest(m, Path(out) / f"{name}.csv")
    return manifest, splits


def cmd_gen_data(args):
    tiles = _setting(args, "tiles", 200)
    size = _setting(args, "size", 32)
    if tiles < 1 or size < 1:
        raise UsageError("--tiles and --size must be >= 1")
    seed = _setting(args, "seed", 0)
    sigma = _setting(args, "noise_sigma", DEFAULT_NOISE_SIGMA)
    out = _setting(args, "out", "data")
    manifest, splits = generate_dataset(out, tiles, size, seed, sigma)
    print(f"wrote {out}: {_summary(manifest)} noise_sigma={sigma:g}")
    for name, m in splits.items():
        print(f"  {name}: {_summary(m)}")
    return EXIT_OK


def _sr_train_config(args, default_epochs):
    epochs = _setting(args, "epochs", None)
    if epochs is None:
        desk = _setting(args, "desk_scale", False)
        epochs = DESK_SR_EPOCHS if desk else default_epochs
    return TrainConfig(epochs=epochs, base_lr=_setting(args, "base_lr", 1e-3),
                       lam=_setting(args, "lambda", 1e-4))


def _tinynina_config(args, scale):
    return TinyNinaConfig(feature_channels=_setting(args, "features", 64),
                          num_blocks=_setting(args, "blocks", 3), scale=scale)


def cmd_train_sr(args):
    mode = _setting(args, "mode", "naive")
    if mode not in ("naive", "channel"):
        raise UsageError(f"--mode must be naive or channel, got {mode!r}")
    manifest = _manifest(args.manifest)
    scale = _setting(args, "scale", 2)
    seed = _setting(args, "seed", 0)
    config = _sr_train_config(args, SR_EPOCHS)
    tiles = [manifest.load_tile(r) for r in manifest.rows]
    result = train_sr(mode, tiles, config, seed=seed, scale=scale,
                      model_config=_tinynina_config(args, scale))
    out = ensure_dir(_setting(args, "out", "."))
    save_checkpoint(result.checkpoint, out / f"sr_{mode}.tnck")
    result.log.write_csv(out / f"sr_{mode}_loss.csv")
    total, _ = param_count(result.model.net)
    print(f"mode={mode} r={result.model.net.config.scale} epochs={config.epochs} "
          f"final_train={result.log.series('train')[-1]:.6g} "
          f"final_val={result.log.series('val')[-1]:.6g} best_epoch={result.best_epoch} "
          f"params={total}")
    return EXIT_OK


def super_resolve_manifest(sr_model, manifest, out_dir, name):
    """Super-resolve every tile of ``manifest`` into ``out_dir/<name>/`` plus ``<name>.csv``."""
    out = ensure_dir(Path(out_dir))
    ensure_dir(out / name)
    rows = []
    for r in manifest.rows:
        tile = super_resolve(sr_model, manifest.load_tile(r))
        rel = f"{name}/{Path(r.tile_path).name}"
        write_tile(tile, out / rel)
        rows.append(ManifestRow(rel, r.no2, r.timestamp, r.station_id, r.region))
    sr_manifest = Manifest(rows, out)
    write_manifest(sr_manifest, out / f"{name}.csv")
    return sr_manifest


def cmd_super_resolve(args):
    ckpt = _checkpoint(args.checkpoint, "tinynina")
    if ckpt.stats is None:
        raise UsageError(f"{args.checkpoint} carries no channel statistics")
    manifest = _manifest(args.manifest)
    sr_model = SRModel.from_checkpoint(ckpt)
    out = _setting(args, "out", "sr")
    name = args.name or Path(args.manifest).stem + "_sr"
    sr_manifest = super_resolve_manifest(sr_model, manifest, out, name)
    print(f"super-resolved {len(sr_manifest)} tiles -> {Path(out) / (name + '.csv')}")
    return EXIT_OK


def _predictor_config(args):
    return PredictorConfig(stem_channels=_setting(args, "stem_channels", 32))


def cmd_train_predictor(args):
    manifest = _manifest(args.manifest)
    val = _manifest(args.val_manifest) if args.val_manifest else None
    sr = _checkpoint(args.sr_checkpoint, "tinynina") if args.sr_checkpoint else None
    epochs = _setting(args, "pred_epochs", None) or _setting(args, "epochs", PREDICTOR_EPOCHS)
    config = predictor_train_config(epochs=epochs, base_lr=_setting(args, "base_lr", 1e-3))
    result = train_predictor(sr, manifest, config, seed=_setting(args, "seed", 0), val=val,
                             model_config=_predictor_config(args))
    out = ensure_dir(_setting(args, "out", "."))
    save_checkpoint(result.checkpoint, out / "predictor.tnck")
    result.log.write_csv(out / "predictor_loss.csv")
    print(f"epochs={config.epochs} final_train_mse={result.log.series('train')[-1]:.6g} "
          f"final_val_mse={result.log.series('val')[-1]:.6g} best_epoch={result.best_epoch} "
          f"params={result.model.params.num_scalars()}")
    return EXIT_OK


def cmd_predict(args):
    if not 1 <= args.month <= 12:
        raise UsageError(f"--month must be in 1..12, got {args.month}")
    model = Predictor.from_checkpoint(_checkpoint(args.checkpoint, "predictor"))
    tile = read_tile(args.tile)
    if args.sr_checkpoint:
        tile = super_resolve(SRModel.from_checkpoint(_checkpoint(args.sr_checkpoint, "tinynina")),
                             tile)
    print(f"{predict_no2(model, tile, args.month):.17g}")
    return EXIT_OK


def _print_report(result, label=None):
    csv_line, text = format_report(result)
    if label:
        print(f"[{label}]")
    print(csv_line)
    print(text)


def cmd_evaluate(args):
    model = Predictor.from_checkpoint(_checkpoint(args.checkpoint, "predictor"))
    sr = _checkpoint(args.sr_checkpoint, "tinynina") if args.sr_checkpoint else None
    result = evaluate(model, _manifest(args.manifest), sr, threads=_setting(args, "threads", 1))
    _print_report(result)
    return EXIT_OK


def cmd_benchmark(args):
    if args.backend:
        backend.set_backend(args.backend)
    if args.checkpoint:
        ckpt = _checkpoint(args.checkpoint, "tinynina")
        model = SRModel.from_checkpoint(ckpt).net
    else:
        model = TinyNina.build(TinyNinaConfig(scale=_setting(args, "scale", 2)),
                               seed=_setting(args, "seed", 0))
    result = run_benchmark(model, n_tiles=_setting(args, "tiles", 500),
                           size=_setting(args, "size", 200), seed=_setting(args, "seed", 0),
                           warmup=args.warmup, heavy_tiles=args.heavy_tiles,
                           heavy=not args.no_heavy)
    print(f"backend={backend.name()}")
    print(result.report())
    return EXIT_OK


def grad_check_models(seed, samples, tol, h, precision="auto"):
    """Reports for TinyNina on 12x8x8 and the predictor on 12x16x16."""
    rng = np.random.default_rng(seed)
    net = TinyNina.build(seed=seed)
    x_sr = rng.normal(size=(12, 8, 8))
    weights = rng.normal(size=(12, 16, 16))

    def sr_objective(params, x):
        net.params = params
        return ag.sum_all(ag.mul(net(x), weights))

    pred = build_predictor(seed=seed)
    x_pred = rng.normal(size=(12, 16, 16))
    month = int(rng.integers(1, 13))

    def pred_objective(params, x):
        pred.params = params
        return predictor_forward(pred, x, month)

    params_sr, params_pred = net.params, pred.params
    return {
        "tinynina": ag.grad_check(sr_objective, params_sr, x_sr, h, tol, samples, seed,
                                  precision),
        "predictor": ag.grad_check(pred_objective, params_pred, x_pred, h, tol, samples, seed,
                                   precision),
    }


def cmd_grad_check(args):
    reports = grad_check_models(_setting(args, "seed", 0), args.samples, args.tol, args.h,
                                args.precision)
    ok = True
    for name, rep in reports.items():
        print(f"{name}: {rep.summary()}")
        if not rep.passed:
            ok = False
            w = rep.worst
            if w is not None:
                print(f"  worst {w.name}{list(w.index)} analytic={w.analytic:.17g} "
                      f"numeric={w.numeric:.17g} rel_error={w.rel_error:.3e}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_pipeline(args):
    t_start = time.perf_counter()
    out = ensure_dir(_setting(args, "out", "pipeline_out"))
    mode = _setting(args, "mode", "both")
    modes = ("naive", "channel") if mode == "both" else (mode,)
    seed = _setting(args, "seed", 0)
    data_seed = _setting(args, "data_seed", seed)
    sigma = _setting(args, "noise_sigma", DEFAULT_NOISE_SIGMA)
    scale = _setting(args, "scale", 2)
    desk = _setting(args, "desk_scale", True)
    sr_epochs = _setting(args, "sr_epochs", DESK_SR_EPOCHS if desk else SR_EPOCHS)
    pred_epochs = _setting(args, "pred_epochs", PREDICTOR_EPOCHS)
    threads = _setting(args, "threads", 1)

    # Phase 1: data, temporal alignment via the manifest, band grouping, normalisation
    data_dir = _setting(args, "data", None)
    synthetic = not data_dir
    if data_dir:
        splits = {n: _manifest(Path(data_dir) / f"{n}.csv") for n in ("train", "val", "test")}
    else:
        data_dir = out / "data"
        _, splits = generate_dataset(data_dir, _setting(args, "tiles", 200),
                                     _setting(args, "size", 32), data_seed, sigma)
    log.info("phase 1: %s", {k: len(v) for k, v in splits.items()})
    print(f"phase 1: train={len(splits['train'])} val={len(splits['val'])} "
          f"test={len(splits['test'])}; bands 10m={','.join(bands_of_class('10m'))} "
          f"20m={','.join(bands_of_class('20m'))} 60m={','.join(bands_of_class('60m'))}")
    train_tiles = [splits["train"].load_tile(r) for r in splits["train"].rows]
    stats = compute_channel_stats(train_tiles)  # always computed; there is no skip option
    print("phase 1: channel statistics computed on the train split")

    sr_models, reports = {}, {}
    for s in modes:  # Phase 2
        mdir = ensure_dir(out / s)
        cfg = TrainConfig(epochs=sr_epochs, base_lr=_setting(args, "base_lr", 1e-3),
                          lam=_setting(args, "lambda", 1e-4))
        res = train_sr(s, train_tiles, cfg, seed=seed, scale=scale,
                       model_config=_tinynina_config(args, scale), band_map=BandMap(),
                       stats=stats)
        save_checkpoint(res.checkpoint, mdir / "sr.tnck")
        res.log.write_csv(mdir / "sr_loss.csv")
        sr_models[s] = res.model
        for name in ("train", "val"):
            super_resolve_manifest(res.model, splits[name], mdir, f"{name}_sr")
        total, _ = param_count(res.model.net)
        print(f"phase 2 [{s}]: epochs={sr_epochs} best_epoch={res.best_epoch} "
              f"val_loss={res.log.series('val')[res.best_epoch]:.6g} params={total}")

    predictors = {}
    for s in modes:  # Phase 3
        mdir = out / s
        sr_train = read_manifest(mdir / "train_sr.csv")
        sr_val = read_manifest(mdir / "val_sr.csv")
        res = train_predictor(None, sr_train, predictor_train_config(epochs=pred_epochs),
                              seed=seed, val=sr_val, model_config=_predictor_config(args))
        save_checkpoint(res.checkpoint, mdir / "predictor.tnck")
        res.log.write_csv(mdir / "predictor_loss.csv")
        predictors[s] = res.model
        print(f"phase 3 [{s}]: epochs={pred_epochs} best_epoch={res.best_epoch} "
              f"val_mse={res.log.series('val')[res.best_epoch]:.6g}")

    ok = True
    bound = MAE_FACTOR * sigma
    for s in modes:  # Phase 4
        result = evaluate(predictors[s], splits["test"], sr_models[s], threads=threads)
        reports[s] = result
        _print_report(result, f"phase 4 [{s}] test")
        (out / s / "report.csv").write_text(format_report(result)[0] + "\n", encoding="utf-8")
        if synthetic:
            passed = result["mae"] <= bound
            ok &= passed
            print(f"held-out MAE {result['mae']:.4f} <= {MAE_FACTOR} * noise_sigma = "
                  f"{bound:.4f}: {'PASS' if passed else 'FAIL'}")
    print(f"pipeline finished in {time.perf_counter() - t_start:.1f} s")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value run configuration file")
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="tinynina", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset and its splits")
    _common(p)
    p.add_argument("--tiles", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-sr", help="train TinyNina (naive or channel)")
    _common(p)
    p.add_argument("--mode", choices=("naive", "channel"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--features", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--desk-scale", dest="desk_scale", action="store_true", default=None)
    p.set_defaults(func=cmd_train_sr)

    p = sub.add_parser("super-resolve", help="super-resolve every tile of a manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--name", default=None, help="output subdirectory and manifest stem")
    p.set_defaults(func=cmd_super_resolve)

    p = sub.add_parser("train-predictor", help="train the NO2 regressor")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", dest="val_manifest")
    p.add_argument("--sr-checkpoint", dest="sr_checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("predict", help="predict NO2 for one tile")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tile", required=True)
    p.add_argument("--month", type=int, required=True)
    p.add_argument("--sr-checkpoint", dest="sr_checkpoint")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="MSE / MAE of a predictor on a manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sr-checkpoint", dest="sr_checkpoint")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="inference timing against a ~1M-parameter stack")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--tiles", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--heavy-tiles", dest="heavy_tiles", type=int, default=20)
    p.add_argument("--no-heavy", dest="no_heavy", action="store_true")
    p.add_argument("--backend", choices=backend.available())
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("grad-check", help="finite-difference check of both networks")
    _common(p)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--precision", choices=("auto", "float64", "extended"), default="auto")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("pipeline", help="all four phases end to end on synthetic data")
    _common(p)
    p.add_argument("--mode", choices=("naive", "channel", "both"))
    p.add_argument("--data", help="existing dataset directory with train/val/test.csv")
    p.add_argument("--tiles", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--sr-epochs", dest="sr_epochs", type=int)
    p.add_argument("--pred-epochs", dest="pred_epochs", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--features", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.run_config = load_run_config(args.config) if args.config else {}
        return args.func(args)
    except NumericalError as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TinyNinaError, ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
