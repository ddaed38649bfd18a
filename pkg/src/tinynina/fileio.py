"""Binary tile and checkpoint formats, and the CSV manifest.

All binary fields are little-endian.

Tile file::

    "S2TL" | u16 version=1 | u16 C | u32 H | u32 W | C x u16 band code | C*H*W f64

Checkpoint file::

    "TNCK" | u16 version=1 | u8 architecture tag | u32 n + n bytes UTF-8 config
    | u16 C (0 = no stats) [| f64 eps | C f64 mean | C f64 std]
    | u32 tensor count | per tensor: u16 n + name | u8 rank | rank x u32 | f64 payload
"""
import csv
from dataclasses import dataclass, field
from datetime import datetime
import io
import os
from pathlib import Path
import struct

import numpy as np

from .autograd import ParamSet
from .bands import BAND_CODE, BAND_ORDER, Tile
from .errors import FormatError
from .stats import ChannelStats

TILE_MAGIC = b"S2TL"
TILE_VERSION = 1
CKPT_MAGIC = b"TNCK"
CKPT_VERSION = 1
ARCH_TAGS = {"tinynina": 1, "predictor": 2}
ARCH_NAMES = {v: k for k, v in ARCH_TAGS.items()}

MANIFEST_HEADER = ("tile_path", "no2", "timestamp", "station_id", "region")
REGIONS = ("urban", "rural")


def fmt_float(x):
    return f"{float(x):.17g}"


class _Reader:
    def __init__(self, data, what):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n, field_name):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated {self.what}: {field_name} needs {n} bytes, "
                f"{len(self.data) - self.pos} left (expected length >= {self.pos + n}, "
                f"actual {len(self.data)})", offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, field_name):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, field_name))

    def f64(self, count, field_name):
        raw = self.take(8 * count, field_name)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)


# ---------------------------------------------------------------- tiles

def tile_bytes(tile):
    x = np.asarray(tile.bands, dtype=np.float64)
    c, h, w = x.shape
    header = TILE_MAGIC + struct.pack("<HHII", TILE_VERSION, c, h, w)
    codes = struct.pack(f"<{c}H", *(BAND_CODE[b] for b in tile.band_ids))
    return header + codes + x.astype("<f8").tobytes(order="C")


def write_tile(tile, path):
    if not isinstance(tile, Tile):
        tile = Tile(tile)
    Path(path).write_bytes(tile_bytes(tile))


def parse_tile(data):
    r = _Reader(data, "tile file")
    magic = r.take(4, "magic")
    if magic != TILE_MAGIC:
        raise FormatError(f"bad tile magic {magic!r}, expected {TILE_MAGIC!r}", offset=0)
    (version,) = r.unpack("<H", "version")
    if version != TILE_VERSION:
        raise FormatError(f"unsupported tile version {version}", offset=4)
    c, h, w = r.unpack("<HII", "dimensions")
    code_off = r.pos
    codes = r.unpack(f"<{c}H", "band codes")
    if any(code >= len(BAND_ORDER) for code in codes):
        raise FormatError(f"unknown band code in {codes}", offset=code_off)
    ids = tuple(BAND_ORDER[code] for code in codes)
    if sorted(ids) != sorted(BAND_ORDER):
        raise FormatError(f"band set {ids} is not the 12-band stack", offset=code_off)
    expected = r.pos + 8 * c * h * w
    if len(data) != expected:
        raise FormatError(
            f"tile payload length mismatch: expected {expected} bytes, actual {len(data)}",
            offset=min(len(data), r.pos))
    x = r.f64(c * h * w, "pixels").reshape(c, h, w)
    if ids != BAND_ORDER:
        order = [ids.index(b) for b in BAND_ORDER]
        x = x[order]
    return Tile(x, BAND_ORDER)


def read_tile(path):
    return parse_tile(Path(path).read_bytes())


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestRow:
    tile_path: str
    no2: float | None
    timestamp: str
    station_id: str
    region: str

    @property
    def time(self):
        return parse_timestamp(self.timestamp)

    @property
    def month(self):
        return self.time.month

    @property
    def quarter(self):
        return (self.time.month - 1) // 3 + 1


def parse_timestamp(ts):
    text = ts.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


@dataclass
class Manifest:
    rows: list = field(default_factory=list)
    base_dir: Path = Path(".")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def path_of(self, row):
        p = Path(row.tile_path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_tile(self, row):
        return read_tile(self.path_of(row))

    def subset(self, rows):
        return Manifest(list(rows), self.base_dir)

    def missing_truth(self):
        """1-based data row numbers without a ground-truth value."""
        return [i + 1 for i, r in enumerate(self.rows) if r.no2 is None]


def manifest_text(manifest):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for r in manifest.rows:
        w.writerow([r.tile_path, "" if r.no2 is None else fmt_float(r.no2),
                    r.timestamp, r.station_id, r.region])
    return buf.getvalue()


def write_manifest(manifest, path):
    Path(path).write_bytes(manifest_text(manifest).encode("utf-8"))


def read_manifest(path, base_dir=None):
    path = Path(path)
    text = path.read_bytes().decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty manifest") from None
    if tuple(header) != MANIFEST_HEADER:
        raise FormatError(f"{path}: header {header} != {list(MANIFEST_HEADER)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(MANIFEST_HEADER):
            raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
        tile_path, no2, ts, station, region = rec
        if no2.strip():
            value = float(no2)
            if not value >= 0.0:
                raise FormatError(f"{path}:{lineno}: no2 must be >= 0, got {no2}")
        else:
            value = None
        try:
            parse_timestamp(ts)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: unparseable timestamp {ts!r}") from None
        if region not in REGIONS:
            raise FormatError(f"{path}:{lineno}: region {region!r} not in {REGIONS}")
        rows.append(ManifestRow(tile_path, value, ts, station, region))
    return Manifest(rows, Path(base_dir) if base_dir is not None else path.parent)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: ParamSet
    stats: ChannelStats | None = None


def config_text(config):
    lines = []
    for key in sorted(config):
        value = str(config[key])
        if "\n" in value or "=" in key or "\n" in key:
            raise ValueError(f"config entry {key!r} cannot be serialised")
        lines.append(f"{key}={value}\n")
    return "".join(lines)


def parse_config_text(text):
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"config line without '=': {line!r}")
        out[key] = value
    return out


def checkpoint_bytes(ckpt):
    if ckpt.kind not in ARCH_TAGS:
        raise ValueError(f"unknown architecture kind {ckpt.kind!r}")
    parts = [CKPT_MAGIC, struct.pack("<HB", CKPT_VERSION, ARCH_TAGS[ckpt.kind])]
    cfg = config_text(ckpt.config).encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    if ckpt.stats is None:
        parts.append(struct.pack("<H", 0))
    else:
        s = ckpt.stats
        parts.append(struct.pack("<Hd", s.channels, s.eps))
        parts.append(s.mean.astype("<f8").tobytes() + s.std.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(ckpt.params)))
    for name, value in ckpt.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value).astype("<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt, path):
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def parse_checkpoint(data):
    r = _Reader(data, "checkpoint")
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0)
    version, tag = r.unpack("<HB", "version/tag")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    if tag not in ARCH_NAMES:
        raise FormatError(f"unknown architecture tag {tag}", offset=6)
    (n,) = r.unpack("<I", "config length")
    cfg_off = r.pos
    try:
        config = parse_config_text(r.take(n, "config").decode("utf-8"))
    except UnicodeDecodeError:
        raise FormatError("config block is not UTF-8", offset=cfg_off) from None
    (c,) = r.unpack("<H", "stats channel count")
    stats = None
    if c:
        (eps,) = r.unpack("<d", "stats eps")
        mean = r.f64(c, "stats mean")
        std = r.f64(c, "stats std")
        stats = ChannelStats(mean, std, eps)
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        rec_off = r.pos
        (ln,) = r.unpack("<H", "tensor name length")
        name = r.take(ln, "tensor name").decode("utf-8")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", offset=rec_off)
        (rank,) = r.unpack("<B", "tensor rank")
        dims = r.unpack(f"<{rank}I", "tensor dims") if rank else ()
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = r.f64(size, f"tensor {name}").reshape(dims)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor", offset=r.pos)
    return Checkpoint(ARCH_NAMES[tag], config, ParamSet(tensors), stats)


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
