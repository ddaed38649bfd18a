import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tinynina.autograd import ParamSet
from tinynina.bands import (BAND_CODE, BAND_ORDER, CHANNEL_SR_REFERENCE, RESOLUTION_CLASS,
                            WAVELENGTH_NM, BandMap, Tile, bands_of_class)
from tinynina.errors import FormatError
from tinynina.fileio import (Checkpoint, Manifest, ManifestRow, checkpoint_bytes,
                             load_checkpoint, parse_checkpoint, parse_tile, read_manifest,
                             read_tile, save_checkpoint, tile_bytes, write_manifest, write_tile)
from tinynina.model import TinyNina, TinyNinaConfig, param_count
from tinynina.predictor import Predictor, build_predictor
from tinynina.sr import SRModel
from tinynina.stats import ChannelStats, compute_channel_stats, denormalize, normalize
from tinynina.synth import synth_tiles


# ------------------------------------------------------------------ band metadata

def test_band_table_exact():
    assert BAND_ORDER == ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9",
                          "B11", "B12")
    expect = {
        "10m": {"B2": 490, "B3": 560, "B4": 665, "B8": 842},
        "20m": {"B5": 705, "B6": 740, "B7": 783, "B8A": 865, "B11": 1610, "B12": 2190},
        "60m": {"B1": 443, "B9": 940},
    }
    for res, table in expect.items():
        for band, nm in table.items():
            assert WAVELENGTH_NM[band] == nm
            assert RESOLUTION_CLASS[band] == res
    assert set(WAVELENGTH_NM) == set(BAND_ORDER) == set(RESOLUTION_CLASS)
    assert "B10" not in BAND_ORDER
    assert bands_of_class("10m") == ("B2", "B3", "B4", "B8")


def test_band_map_exhaustive():
    bm = BandMap()
    expect = {"B5": "B4", "B6": "B4", "B7": "B4", "B8A": "B8", "B11": "B2", "B12": "B2"}
    assert dict(bm.reference) == expect == CHANNEL_SR_REFERENCE
    assert set(bm.targets) == set(bands_of_class("20m"))
    for t in bm.targets:
        assert bm.ref(t) in bands_of_class("10m")
    tgt, ref = bm.index_pairs()
    assert [BAND_ORDER[i] for i in tgt] == list(expect)
    assert [BAND_ORDER[i] for i in ref] == list(expect.values())


def test_band_map_missing_metadata():
    with pytest.raises(KeyError):
        BandMap(band_ids=BAND_ORDER[:-1])
    with pytest.raises(ValueError):
        BandMap(reference=(("B5", "B6"),))


def test_tile_metadata():
    t = Tile(np.zeros((12, 2, 2)))
    assert t.wavelengths_nm[3] == 665 and t.resolution_class[0] == "60m"
    with pytest.raises(KeyError):
        Tile(np.zeros((1, 2, 2)), ("B10",))


# ------------------------------------------------------------------ channel stats

def test_stats_constant_channel():
    tiles = [np.full((1, 3, 3), 5.0), np.full((1, 2, 4), 5.0)]
    s = compute_channel_stats(tiles)
    assert s.mean[0] == 5.0
    assert s.std[0] == math.sqrt(1e-8)
    assert np.all(normalize(tiles[0], s) == 0.0)


def test_stats_two_point():
    s = compute_channel_stats([np.array([[[1.0, 3.0]]])])
    assert s.mean[0] == 2.0
    assert s.std[0] == math.sqrt(1.0 + 1e-8)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_stats_order_invariant(seed, n):
    r = np.random.default_rng(seed)
    tiles = [r.normal(size=(3, r.integers(1, 5), r.integers(1, 5))) * 10 for _ in range(n)]
    a = compute_channel_stats(tiles)
    b = compute_channel_stats([tiles[i] for i in r.permutation(n)])
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


@given(st.integers(0, 2**31 - 1))
def test_stats_match_pooled_oracle(seed):
    r = np.random.default_rng(seed)
    tiles = [r.uniform(size=(4, 5, 6)) for _ in range(3)]
    pooled = np.concatenate([t.reshape(4, -1) for t in tiles], axis=1)
    s = compute_channel_stats(tiles)
    np.testing.assert_allclose(s.mean, pooled.mean(axis=1), rtol=1e-13)
    np.testing.assert_allclose(s.std, np.sqrt(pooled.var(axis=1) + 1e-8), rtol=1e-12)


def test_stats_empty():
    with pytest.raises(ValueError):
        compute_channel_stats([])


@given(st.integers(0, 2**31 - 1))
def test_normalize_roundtrip(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(12, 6, 6))
    s = compute_channel_stats([x, r.uniform(size=(12, 6, 6))])
    assert np.max(np.abs(denormalize(normalize(x, s), s) - x)) <= 1e-10


def test_normalized_training_set_is_standardised():
    tiles = synth_tiles(20, 16, 16, seed=3)
    s = compute_channel_stats(tiles)
    z = [normalize(t, s) for t in tiles]
    again = compute_channel_stats(z)
    assert np.all(np.abs(again.mean) < 1e-9)
    assert np.all(np.abs(again.std - 1.0) < 1e-3)


def test_channel_stats_validation():
    with pytest.raises(ValueError):
        ChannelStats(np.zeros(2), np.array([1.0, 0.0]))


# ------------------------------------------------------------------ tile format

def test_tile_file_size_200(tmp_path):
    p = tmp_path / "t.s2t"
    write_tile(Tile(np.zeros((12, 200, 200))), p)
    assert p.stat().st_size == 4 + 2 + 2 + 4 + 4 + 24 + 12 * 200 * 200 * 8 == 3_840_040


def test_tile_header_layout():
    x = np.arange(12 * 2 * 3, dtype=float).reshape(12, 2, 3)
    data = tile_bytes(Tile(x))
    assert data[:4] == b"S2TL"
    assert struct.unpack("<HHII", data[4:16]) == (1, 12, 2, 3)
    assert struct.unpack("<12H", data[16:40]) == tuple(range(12))
    assert np.array_equal(np.frombuffer(data[40:], "<f8").reshape(12, 2, 3), x)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_tile_roundtrip_bit_exact(seed, h, w):
    x = np.random.default_rng(seed).uniform(size=(12, h, w))
    t = parse_tile(tile_bytes(Tile(x)))
    assert np.array_equal(t.bands, x) and t.band_ids == BAND_ORDER


def test_tile_file_roundtrip(tmp_path):
    x = np.random.default_rng(0).uniform(size=(12, 5, 4))
    write_tile(Tile(x), tmp_path / "a.s2t")
    assert np.array_equal(read_tile(tmp_path / "a.s2t").bands, x)


def test_tile_truncated_reports_lengths():
    data = tile_bytes(Tile(np.zeros((12, 3, 3))))
    with pytest.raises(FormatError) as e:
        parse_tile(data[:-5])
    assert "expected" in str(e.value) and "actual" in str(e.value)
    assert e.value.offset is not None
    with pytest.raises(FormatError):
        parse_tile(data[:10])


def test_tile_bad_magic_version_bands():
    data = bytearray(tile_bytes(Tile(np.zeros((12, 1, 1)))))
    bad = bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError) as e:
        parse_tile(bad)
    assert e.value.offset == 0
    v = bytearray(data)
    v[4] = 2
    with pytest.raises(FormatError):
        parse_tile(bytes(v))
    b = bytearray(data)
    b[16:18] = struct.pack("<H", 3)  # duplicate B4 code, B1 missing
    with pytest.raises(FormatError):
        parse_tile(bytes(b))


def test_tile_band_codes_reordered_on_read():
    x = np.random.default_rng(0).uniform(size=(12, 2, 2))
    ids = tuple(reversed(BAND_ORDER))
    t = parse_tile(tile_bytes(Tile(x, ids)))
    assert t.band_ids == BAND_ORDER
    assert np.array_equal(t.bands[BAND_CODE["B12"]], x[0])


# ------------------------------------------------------------------ manifest

def rows():
    return [ManifestRow("tiles/a.s2t", 12.5, "2019-03-04T16:20:00Z", "S01", "urban"),
            ManifestRow("tiles/b.s2t", 0.1 + 0.2, "2020-12-31T18:00:00Z", "S27", "rural")]


def test_manifest_roundtrip_bytes(tmp_path):
    p = tmp_path / "m.csv"
    write_manifest(Manifest(rows(), tmp_path), p)
    raw = p.read_bytes()
    assert raw.startswith(b"tile_path,no2,timestamp,station_id,region\n")
    assert b"\r" not in raw
    assert b"0.30000000000000004" in raw  # 17 significant digits
    m = read_manifest(p)
    assert m.rows == rows()
    write_manifest(m, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == raw


def test_manifest_month_quarter():
    r = rows()
    assert (r[0].month, r[0].quarter) == (3, 1)
    assert (r[1].month, r[1].quarter) == (12, 4)


@pytest.mark.parametrize("line", [
    "a.s2t,-1,2019-01-01T00:00:00Z,S01,urban",
    "a.s2t,1,not-a-time,S01,urban",
    "a.s2t,1,2019-01-01T00:00:00Z,S01,suburban",
    "a.s2t,1,2019-01-01T00:00:00Z,S01",
])
def test_manifest_rejects_bad_rows(tmp_path, line):
    p = tmp_path / "m.csv"
    p.write_text("tile_path,no2,timestamp,station_id,region\n" + line + "\n")
    with pytest.raises(FormatError):
        read_manifest(p)


def test_manifest_missing_truth_rows(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("tile_path,no2,timestamp,station_id,region\n"
                 "a,1,2019-01-01T00:00:00Z,S01,urban\nb,,2019-01-01T00:00:00Z,S01,urban\n")
    assert read_manifest(p).missing_truth() == [2]


# ------------------------------------------------------------------ checkpoints

def sr_checkpoint():
    net = TinyNina.build(TinyNinaConfig(feature_channels=8, num_blocks=1), seed=0)
    stats = compute_channel_stats(synth_tiles(3, 8, 8, 0))
    return SRModel(net, stats, "naive", 2).to_checkpoint()


def test_checkpoint_roundtrip_canonical(tmp_path):
    ck = sr_checkpoint()
    save_checkpoint(ck, tmp_path / "a.tnck")
    back = load_checkpoint(tmp_path / "a.tnck")
    assert back.kind == "tinynina" and back.config == ck.config
    assert np.array_equal(back.stats.mean, ck.stats.mean)
    assert back.stats.eps == ck.stats.eps
    for name, v in ck.params.items():
        assert np.array_equal(back.params[name], v)
    save_checkpoint(back, tmp_path / "b.tnck")
    assert (tmp_path / "a.tnck").read_bytes() == (tmp_path / "b.tnck").read_bytes()


def test_checkpoint_counts_match_rebuilt_model():
    for ck in (sr_checkpoint(), build_predictor(seed=0).to_checkpoint()):
        back = parse_checkpoint(checkpoint_bytes(ck))
        model = (SRModel.from_checkpoint(back).net if back.kind == "tinynina"
                 else Predictor.from_checkpoint(back))
        data = checkpoint_bytes(ck)
        # tensor count field sits right before the first tensor record
        cfg_len = struct.unpack("<I", data[7:11])[0]
        off = 11 + cfg_len
        c = struct.unpack("<H", data[off:off + 2])[0]
        off += 2 + (8 + 16 * c if c else 0)
        assert struct.unpack("<I", data[off:off + 4])[0] == len(model.params)
        total = (param_count(model)[0] if back.kind == "tinynina"
                 else model.params.num_scalars())
        assert back.params.num_scalars() == total


def test_checkpoint_no_stats_roundtrip():
    ck = Checkpoint("predictor", {"a": "1"}, ParamSet({"w": np.ones((2, 2))}))
    back = parse_checkpoint(checkpoint_bytes(ck))
    assert back.stats is None and back.config == {"a": "1"}


def test_checkpoint_tampering():
    data = checkpoint_bytes(sr_checkpoint())
    with pytest.raises(FormatError):
        parse_checkpoint(b"XXXX" + data[4:])
    bad_version = data[:4] + struct.pack("<H", 9) + data[6:]
    with pytest.raises(FormatError, match="version"):
        parse_checkpoint(bad_version)
    bad_tag = data[:6] + bytes([77]) + data[7:]
    with pytest.raises(FormatError, match="tag"):
        parse_checkpoint(bad_tag)
    with pytest.raises(FormatError, match="truncated"):
        parse_checkpoint(data[:-3])
    with pytest.raises(FormatError, match="trailing"):
        parse_checkpoint(data + b"\0")


def test_checkpoint_name_collision():
    rec = struct.pack("<H", 1) + b"w" + struct.pack("<BI", 1, 1) + struct.pack("<d", 1.0)
    data = b"TNCK" + struct.pack("<HB", 1, 2) + struct.pack("<I", 0) + struct.pack("<H", 0)
    data += struct.pack("<I", 2) + rec + rec
    with pytest.raises(FormatError, match="duplicate"):
        parse_checkpoint(data)


def test_checkpoint_unknown_kind():
    with pytest.raises(ValueError):
        checkpoint_bytes(Checkpoint("resnet", {}, ParamSet()))
