"""Acceptance gate: one PASS/FAIL line per primary criterion, at the pinned tolerances.

Each test measures, prints its verdict through the ``acceptance`` fixture and
then asserts the same condition, so a red line always means a red test.
"""
import filecmp
import math
from pathlib import Path
import re
import time

import numpy as np
import pytest

from tinynina import cli
from tinynina import tensor as T
from tinynina.autograd import ParamSet
from tinynina.bands import BAND_ORDER, BandMap
from tinynina.bench import run_benchmark
from tinynina.config import TrainConfig
from tinynina.fileio import read_manifest, read_tile
from tinynina.model import TinyNina, TinyNinaConfig, param_count
from tinynina.optim import Schedule, lr_at
from tinynina.sr import (channel_sr_loss, identity_baseline_loss, naive_sr_loss, split_indices,
                         train_sr)
from tinynina.stats import compute_channel_stats, denormalize, normalize
from tinynina.synth import no2_signal, synth_tiles

from test_model import closed_form_count
from test_tensor import scalar_bicubic


class Clock:
    def __init__(self, budget):
        self.budget = budget
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0

    def ok(self):
        return self.elapsed < self.budget

    def __str__(self):
        return f"{self.elapsed:.1f} s (budget {self.budget:g} s)"


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# ------------------------------------------------------------------ 1

def test_parameter_budget(acceptance):
    clock = Clock(1)
    total, parts = param_count(TinyNina.build())
    expect_parts = {"attention": 24, "embed": 832, "head.low": 4160, "head.high": 27696,
                    "head.fusion": 924}
    expect_parts.update({f"blocks.{i}.dw": 640 for i in range(3)})
    expect_parts.update({f"blocks.{i}.pw": 4160 for i in range(3)})
    ok = (45_000 <= total <= 56_000 and total == 48_036 == closed_form_count()
          and parts == expect_parts and clock.ok())
    acceptance("parameter budget", ok,
               f"param_count={total} in [45000, 56000], pinned 48036, components match "
               f"closed form; {clock}")
    assert ok


# ------------------------------------------------------------------ 2

def test_gradient_fidelity(acceptance):
    clock = Clock(60)
    reports = cli.grad_check_models(seed=0, samples=200, tol=1e-6, h=1e-6)
    sizes = {k: len(r.entries) for k, r in reports.items()}
    worst = {k: r.max_rel_error for k, r in reports.items()}
    ok = all(n >= 200 for n in sizes.values()) and max(worst.values()) < 1e-6 and clock.ok()
    acceptance("gradient fidelity", ok,
               ", ".join(f"{k}: {sizes[k]} coords max_rel={worst[k]:.2e}" for k in reports)
               + f" (tol 1e-6, h 1e-6); {clock}")
    assert ok


# ------------------------------------------------------------------ 3

def kernel_checks():
    """Every tensor-level example, by name."""
    r = np.random.default_rng(0)
    cp = lambda w, b, s=1, p=0: T.ConvParams(np.asarray(w, float), np.asarray(b, float), s, p)  # noqa: E731
    x8 = r.normal(size=(8, 2, 3))
    ramp = (np.arange(4)[:, None] * 4 + np.arange(4)[None, :]).astype(float)
    up = T.bicubic_resize(ramp[None], 2)
    c = r.normal(size=(5,))
    const = np.broadcast_to(c[:, None, None], (5, 6, 8)).copy()
    img = r.normal(size=(4, 5, 7))
    xs = r.normal(size=100)
    a, b = r.normal(size=(3, 4, 4)), r.normal(size=(5, 4, 4))
    cat = T.concat_channels(a, b)
    delta = np.zeros((3, 3, 3))
    delta[:, 1, 1] = 1.0
    two = np.stack([np.ones((2, 2)), 2 * np.ones((2, 2))])
    dw = T.depthwise_conv2d(two, np.ones((2, 3, 3)), np.zeros(2), 1)
    return {
        "conv 1x1 identity": np.array_equal(T.conv2d(np.ones((1, 3, 3)), cp([[[[1.0]]]], [0.0])),
                                            np.ones((1, 3, 3))),
        "conv 1x1 affine": np.array_equal(T.conv2d([[[1, 2], [3, 4]]], cp([[[[2.0]]]], [1.0])),
                                          [[[3, 5], [7, 9]]]),
        "conv 3x3 sum 45": T.conv2d(np.arange(1, 10.0).reshape(1, 3, 3),
                                    cp(np.ones((1, 1, 3, 3)), [0.0]))[0, 0, 0] == 45.0,
        "depthwise delta": np.array_equal(T.depthwise_conv2d(a[:3], delta, np.zeros(3), 1), a[:3]),
        "depthwise corners 4/8": bool(np.all(dw[0] == 4.0) and np.all(dw[1] == 8.0)),
        "depthwise count 640": 64 * 9 + 64 == 640,
        "pointwise identity": np.array_equal(
            T.pointwise_conv2d(a, cp(np.eye(3)[:, :, None, None], np.zeros(3))), a),
        "pointwise dot 16": T.pointwise_conv2d(np.array([1.0, 2.0]).reshape(2, 1, 1),
                                               cp([[[[3.0]], [[4.0]]]], [5.0]))[0, 0, 0] == 16.0,
        "pointwise count 4160": 64 * 64 + 64 == 4160,
        "shuffle r=1": np.array_equal(T.pixel_shuffle(x8, 1), x8),
        "shuffle layout": np.array_equal(
            T.pixel_shuffle(np.array([1.5, -2.0, 3.25, 7.0]).reshape(4, 1, 1), 2)[0],
            [[1.5, -2.0], [3.25, 7.0]]),
        "shuffle inverse": np.array_equal(T.pixel_unshuffle(T.pixel_shuffle(x8, 2), 2), x8),
        "pool constant": np.array_equal(T.global_avg_pool(const), c),
        "pool mean 2.5": T.global_avg_pool([[[1, 2], [3, 4]]])[0] == 2.5,
        "pool linearity": abs(np.sum(T.global_avg_pool(img)) * 35 - np.sum(img)) <= 1e-12 * max(
            1.0, np.sum(np.abs(img))),
        "sigmoid(0)": T.sigmoid(0.0) == 0.5,
        "relu": T.relu(-3.0) == 0.0 and T.relu(3.0) == 3.0,
        "sigmoid symmetry": np.max(np.abs(T.sigmoid(xs) + T.sigmoid(-xs) - 1.0)) <= 1e-12,
        "concat shape": cat.shape == (8, 4, 4),
        "concat slices": np.array_equal(cat[:3], a) and np.array_equal(cat[3:], b),
        "concat 1+1": np.array_equal(T.concat_channels(a[:1], b[:1]),
                                     np.concatenate([a[:1], b[:1]])),
        "bicubic constant": all(np.max(np.abs(T.bicubic_resize(const, s) - c[:, None, None]))
                                <= 1e-12 for s in (0.5, 2, 3)),
        "bicubic down-up": np.max(np.abs(T.bicubic_resize(T.bicubic_resize(const, 0.5), 2)
                                         - const)) <= 1e-12,
        "bicubic ramp oracle": all(abs(up[0, oy, ox] - scalar_bicubic(ramp, 8, 8, oy, ox)) < 1e-12
                                   for oy, ox in [(0, 0), (3, 4), (5, 2), (7, 7), (1, 6)]),
    }


def test_kernel_oracles(acceptance):
    clock = Clock(10)
    checks = kernel_checks()
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and clock.ok()
    acceptance("kernel oracles", ok,
               f"{len(checks) - len(failed)}/{len(checks)} examples exact"
               + (f", failed: {failed}" if failed else "") + f"; {clock}")
    assert ok


# ------------------------------------------------------------------ 4

def test_normalization_identity(acceptance):
    clock = Clock(5)
    tiles = [t.bands for t in synth_tiles(64, 32, 32, seed=0)]
    stats = compute_channel_stats(tiles)
    z = [normalize(t, stats) for t in tiles]
    again = compute_channel_stats(z)
    mean_err = float(np.max(np.abs(again.mean)))
    std_err = float(np.max(np.abs(again.std - 1.0)))
    rt = max(float(np.max(np.abs(denormalize(normalize(t, stats), stats) - t))) for t in tiles)
    ok = mean_err < 1e-9 and std_err < 1e-3 and rt <= 1e-10 and clock.ok()
    acceptance("normalization identity", ok,
               f"max|mean|={mean_err:.1e} (<1e-9), max|std-1|={std_err:.1e} (<1e-3), "
               f"round trip {rt:.1e} (<=1e-10); {clock}")
    assert ok


# ------------------------------------------------------------------ 5

def test_loss_identities(acceptance):
    clock = Clock(5)
    r = np.random.default_rng(1)
    x = r.normal(size=(12, 6, 6))
    copied = x.copy()
    for t in BandMap().targets:
        copied[BAND_ORDER.index(t)] = copied[BAND_ORDER.index(BandMap().ref(t))]
    naive0 = naive_sr_loss(x, x).item()
    chan0 = channel_sr_loss(copied, copied, BandMap(), None, 0.0).item()
    pen = channel_sr_loss(copied, copied, BandMap(), ParamSet({"w": np.array([1.0, 2.0])}),
                          1e-4).item()
    s = Schedule(1e-3)
    halves = all(lr_at(s, e) == lr_at(s, e - 1) / 2 for e in (10, 20, 30))
    steady = all(lr_at(s, e) == lr_at(s, e - 1) for e in range(1, 40) if e % 10)
    ok = (naive0 == 0.0 and chan0 == 0.0 and pen == 1e-4 * 5 and halves and steady
          and clock.ok())
    acceptance("loss identities", ok,
               f"naive(x,x)={naive0}, channel(copy,lambda=0)={chan0}, "
               f"penalty-only={pen!r} (=1e-4*5), lr halves at 10/20/30={halves}; {clock}")
    assert ok


# ------------------------------------------------------------------ 6

def test_band_mapping(acceptance):
    clock = Clock(1)
    expect = {"B5": "B4", "B6": "B4", "B7": "B4", "B8A": "B8", "B11": "B2", "B12": "B2"}
    bm = BandMap()
    got = {t: bm.ref(t) for t in bm.targets}
    ok = got == expect and len(bm.targets) == 6 and clock.ok()
    acceptance("band mapping", ok, f"{got}; {clock}")
    assert ok


# ------------------------------------------------------------------ 7

@pytest.mark.slow
def test_sr_convergence(acceptance):
    clock = Clock(300)
    tiles = synth_tiles(64, 32, 32, seed=0)
    naive = train_sr("naive", tiles, TrainConfig(epochs=30), seed=0, scale=2)
    val = naive.log.series("val")
    ratio = val[-1] / val[0]
    chan = train_sr("channel", tiles, TrainConfig(epochs=30), seed=0)
    _, val_idx = split_indices(len(tiles), 0.2, 0)
    baseline = identity_baseline_loss([tiles[i] for i in val_idx], chan.model.stats)
    chan_best = min(chan.log.series("val"))
    ok = ratio <= 0.5 and chan_best < baseline and clock.ok()
    acceptance("SR convergence", ok,
               f"naive val L1 {val[0]:.4f} -> {val[-1]:.4f} (ratio {ratio:.3f} <= 0.5); "
               f"channel val {chan_best:.4f} < identity baseline {baseline:.4f}; {clock}")
    assert ok


# ------------------------------------------------------------------ 8

@pytest.mark.slow
def test_end_to_end_pipeline(acceptance, tmp_path, capsys):
    clock = Clock(900)
    sigma = 2.0
    code = run_cli("pipeline", "--out", tmp_path, "--tiles", 200, "--noise-sigma", sigma)
    out = capsys.readouterr().out
    maes = dict(re.findall(r"\[phase 4 \[(\w+)\] test\]\n[^\n]*\n[^\n]*\nMAE = ([\d.]+)", out))
    # threshold sanity: the noise-free closed-form signal itself scores about sigma*sqrt(2/pi)
    test = read_manifest(tmp_path / "data" / "test.csv")
    oracle = float(np.mean([abs(no2_signal(read_tile(test.path_of(r)), r.month) - r.no2)
                            for r in test.rows]))
    bound = 1.5 * sigma
    ok = (code == 0 and set(maes) == {"naive", "channel"}
          and all(float(v) <= bound for v in maes.values()) and clock.ok())
    acceptance("end-to-end pipeline", ok,
               f"200 tiles, noise_sigma={sigma}: held-out MAE "
               + ", ".join(f"{k}={float(v):.3f}" for k, v in sorted(maes.items()))
               + f" (<= {bound}); closed-form oracle MAE {oracle:.3f}; exit {code}; {clock}")
    assert ok


# ------------------------------------------------------------------ 9

@pytest.mark.slow
def test_efficiency_direction(acceptance):
    clock = Clock(600)
    res = run_benchmark(TinyNina.build(seed=0), n_tiles=500, size=200, seed=0, warmup=2,
                        heavy_tiles=20)
    ok = res.speedup > 1.0 and res.tiny.tiles == 500 and clock.ok()
    acceptance("efficiency direction", ok,
               f"TinyNina {res.tiny.tiles_per_s:.2f} tiles/s over 500 tiles, reference "
               f"({res.heavy.params} params) {res.heavy.tiles_per_s:.2f} tiles/s over "
               f"{res.heavy.tiles} tiles; speedup {res.speedup:.2f}x > 1; {clock}")
    assert ok


# ------------------------------------------------------------------ 10

def command_run(root):
    """Every artifact-producing command once, small settings."""
    data = root / "data"
    small = ["--features", 8, "--blocks", 1, "--epochs", 2, "--seed", 3]
    assert run_cli("gen-data", "--tiles", 200, "--size", 8, "--seed", 5, "--out", data) == 0
    for mode in ("naive", "channel"):
        assert run_cli("train-sr", "--manifest", data / "train.csv", "--mode", mode,
                       "--out", root / "sr", *small) == 0
    assert run_cli("super-resolve", "--checkpoint", root / "sr" / "sr_naive.tnck",
                   "--manifest", data / "val.csv", "--out", root / "sr", "--name", "val_hr") == 0
    assert run_cli("train-predictor", "--manifest", data / "train.csv",
                   "--val-manifest", data / "val.csv", "--sr-checkpoint",
                   root / "sr" / "sr_channel.tnck", "--stem-channels", 4, "--epochs", 2,
                   "--seed", 3, "--out", root / "pred") == 0
    assert run_cli("pipeline", "--tiles", 200, "--size", 4, "--sr-epochs", 1,
                   "--pred-epochs", 1, "--features", 8, "--blocks", 1, "--stem-channels", 4,
                   "--seed", 2, "--out", root / "pipe") in (0, 1)


def tree(root):
    return sorted(str(p.relative_to(root)) for p in Path(root).rglob("*") if p.is_file())


def test_determinism(acceptance, tmp_path, capsys):
    clock = Clock(300)
    for run in ("a", "b"):
        command_run(tmp_path / run)
    out = capsys.readouterr().out
    files = tree(tmp_path / "a")
    same_tree = files == tree(tmp_path / "b")
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    kinds = sorted({Path(f).suffix for f in files})
    ok = same_tree and not mismatch and not errors and clock.ok() and "error" not in out
    acceptance("determinism", ok,
               f"{len(files)} artifacts ({', '.join(kinds)}) from gen-data, train-sr x2, "
               f"super-resolve, train-predictor, pipeline; {len(mismatch)} differ; {clock}")
    assert ok
