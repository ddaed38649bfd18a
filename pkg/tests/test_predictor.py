import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinynina import autograd as ag
from tinynina.config import predictor_train_config
from tinynina.errors import DataError, ShapeError
from tinynina.fileio import Manifest, checkpoint_bytes, parse_checkpoint, read_manifest
from tinynina.predictor import (Predictor, PredictorConfig, build_predictor, evaluate, metrics,
                                format_report, predict_no2, predictor_forward, train_predictor)
from tinynina.synth import synth_generate

TINY = PredictorConfig(stem_channels=4, num_res_blocks=2, embedding_size=3, hidden_fc=5)


def zeroed(model, keep_bias=True, seed=0):
    r = np.random.default_rng(seed)
    for name in model.params:
        if name.endswith(".weight") and not name.startswith(("attention", "season")):
            model.params[name][...] = 0.0
        elif keep_bias:
            model.params[name][...] = r.normal(size=model.params[name].shape)
    return model


def test_default_param_count():
    assert build_predictor(seed=0).params.num_scalars() == 64_993


def test_scalar_output_any_size_and_month():
    model = build_predictor(TINY, seed=0)
    for h, w in ((16, 16), (7, 9), (1, 1)):
        x = np.random.default_rng(h).normal(size=(12, h, w))
        for m in (1, 6, 12):
            out = predictor_forward(model, x, m)
            assert out.shape == ()
            assert math.isfinite(out.item())


def test_same_seed_same_init():
    a, b = build_predictor(seed=4), build_predictor(seed=4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = build_predictor(seed=5)
    assert not np.array_equal(a.params["stem.weight"], c.params["stem.weight"])


def test_zero_weights_predict_final_bias():
    model = build_predictor(seed=0)
    for name in model.params:
        model.params[name][...] = 0.0
    model.params["fc2.bias"][0] = 3.5
    for s in range(3):
        x = np.random.default_rng(s).normal(size=(12, 8, 8))
        assert predict_no2(model, x, s + 1) == 3.5


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_bias_only_model_ignores_tile(seed, month):
    model = zeroed(build_predictor(TINY, seed=0), seed=seed)
    r = np.random.default_rng(seed)
    a = predict_no2(model, r.normal(size=(12, 6, 6)), month)
    b = predict_no2(model, 100 * r.normal(size=(12, 6, 6)), month)
    assert a == b


def test_predictions_repeatable_and_scaled():
    cfg = PredictorConfig(**{**TINY.__dict__, "target_mean": 20.0, "target_scale": 3.0})
    model = build_predictor(cfg, seed=1)
    x = np.random.default_rng(0).normal(size=(12, 8, 8))
    raw = predictor_forward(model, x, 4).item()
    assert predict_no2(model, x, 4) == predict_no2(model, x, 4) == 20.0 + 3.0 * raw


@pytest.mark.parametrize("month", [0, 13, 2.5, True, -1])
def test_month_out_of_range(month):
    with pytest.raises(ValueError):
        predict_no2(build_predictor(TINY), np.zeros((12, 4, 4)), month)


def test_wrong_channel_count():
    with pytest.raises(ShapeError):
        predict_no2(build_predictor(TINY), np.zeros((3, 4, 4)), 1)


def test_embedding_gradient_only_reaches_month_row():
    model = build_predictor(TINY, seed=2)
    x = np.random.default_rng(0).normal(size=(12, 8, 8))
    ag.backward(predictor_forward(model, x, 7), model.params)
    g = model.params.grads["season.weight"]
    assert np.any(g[6] != 0)
    assert np.all(np.delete(g, 6, axis=0) == 0)


def test_predictor_grad_check():
    model = build_predictor(seed=3)
    x = np.random.default_rng(3).normal(size=(12, 16, 16))

    def objective(params, inp):
        # grad_check may hand over an extended-precision copy of the parameters
        model.params = params
        return predictor_forward(model, inp, 5)

    rep = ag.grad_check(objective, model.params, x, samples=200, seed=0, tol=1e-6)
    assert len(rep.entries) == 200
    assert rep.max_rel_error < 1e-6, rep.worst
    emb = ag.grad_check(objective, model.params, x, names=["season.weight"])
    assert {e.index[0] for e in emb.entries} == set(range(12))
    assert emb.max_rel_error < 1e-6


def test_checkpoint_roundtrip_preserves_predictions():
    model = build_predictor(TINY, seed=0)
    back = Predictor.from_checkpoint(parse_checkpoint(checkpoint_bytes(model.to_checkpoint())))
    x = np.random.default_rng(0).normal(size=(12, 6, 6))
    assert predict_no2(back, x, 2) == predict_no2(model, x, 2)
    assert back.config == model.config


# ------------------------------------------------------------------ metrics

def test_metrics_examples():
    assert metrics([8.0, 12.0], [8.0, 12.0]) == {"mse": 0.0, "mae": 0.0, "n": 2}
    assert metrics([10.0, 10.0], [8.0, 12.0]) == {"mse": 4.0, "mae": 2.0, "n": 2}
    with pytest.raises(DataError):
        metrics([], [])
    with pytest.raises(ShapeError):
        metrics([1.0], [1.0, 2.0])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=30))
def test_metrics_jensen(pairs):
    p, t = zip(*pairs)
    m = metrics(p, t)
    err = np.abs(np.subtract(p, t))
    peak = err.max()
    if peak > 0:  # scaled, because the squares of tiny errors underflow
        u = err / peak
        assert np.mean(u) <= math.sqrt(np.mean(u * u)) * (1 + 1e-12)
    if m["mse"] > 1e-300:
        assert m["mae"] <= math.sqrt(m["mse"]) * (1 + 1e-12)


def test_metrics_tiny_errors_do_not_trip_jensen_guard():
    m = metrics([0.0], [4.0722902849494406e-227])
    assert m["mae"] == 4.0722902849494406e-227 and m["mse"] == 0.0


def test_report_format():
    line, text = format_report({"mse": 4.0, "mae": 2.0, "n": 2})
    assert line == "4,2,2"  # shortest round-trip floats
    assert "MSE = 4.0000" in text and "MAE = 2.0000" in text


# ------------------------------------------------------------------ evaluate / train

@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("pred")
    synth_generate(24, 8, 8, seed=1, out_dir=d)
    return read_manifest(d / "manifest.csv")


def test_evaluate_constant_model(data):
    cfg = PredictorConfig(**{**TINY.__dict__, "target_mean": 10.0})
    model = build_predictor(cfg, seed=0)
    model.params["fc2.weight"][...] = 0.0
    model.params["fc2.bias"][...] = 0.0
    got = evaluate(model, data)
    truth = np.array([r.no2 for r in data.rows])
    assert got["n"] == 24
    assert got["mse"] == pytest.approx(np.mean((10.0 - truth) ** 2), rel=1e-13)
    assert got["mae"] == pytest.approx(np.mean(np.abs(10.0 - truth)), rel=1e-13)
    assert evaluate(model, data, threads=4) == got


def test_evaluate_errors(data):
    with pytest.raises(DataError):
        evaluate(build_predictor(TINY), Manifest([], data.base_dir))
    rows = list(data.rows)
    rows[2] = type(rows[2])(rows[2].tile_path, None, rows[2].timestamp, rows[2].station_id,
                            rows[2].region)
    with pytest.raises(DataError, match=r"\[3\]"):
        evaluate(build_predictor(TINY), Manifest(rows, data.base_dir))
    with pytest.raises(DataError, match=r"\[3\]"):
        train_predictor(None, Manifest(rows, data.base_dir), model_config=TINY)


@pytest.fixture(scope="module")
def trained(data):
    cfg = predictor_train_config(epochs=4)
    return [train_predictor(None, m, cfg, seed=3, model_config=TINY)
            for m in (data, Manifest(list(reversed(data.rows)), data.base_dir), data)]


def test_train_seed_determinism_and_order_invariance(trained):
    a, shuffled, again = trained
    assert a.log.to_csv() == again.log.to_csv() == shuffled.log.to_csv()
    assert checkpoint_bytes(a.checkpoint) == checkpoint_bytes(shuffled.checkpoint)


def test_best_epoch_is_min_validation(trained):
    res = trained[0]
    val = res.log.series("val")
    assert len(val) == 5 and res.best_epoch == int(np.argmin(val))
    best_so_far = np.minimum.accumulate(val)
    assert np.all(np.diff(best_so_far) <= 0)


def test_training_standardises_targets(trained, data):
    cfg = trained[0].model.config
    assert cfg.target_scale > 0 and 0 < cfg.target_mean < 60
    assert trained[0].model.stats is not None


@pytest.mark.slow
def test_month_sensitivity_after_training(tmp_path):
    synth_generate(120, 8, 8, seed=2, noise_sigma=0.5, out_dir=tmp_path)
    m = read_manifest(tmp_path / "manifest.csv")
    res = train_predictor(None, m, predictor_train_config(epochs=25), seed=0)
    tile = m.load_tile(m.rows[0])
    preds = [predict_no2(res.model, tile, month) for month in range(1, 13)]
    # the seasonal term peaks in January and bottoms out in July
    assert max(preds) - min(preds) > 0
    assert preds[0] > preds[6]
