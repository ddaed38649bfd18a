"""Sentinel-2 band metadata and the Channel-SR reference assignment."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

# Band 10 (cirrus) is not part of the 12-band stack.
BAND_ORDER = ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12")

WAVELENGTH_NM = {
    "B1": 443, "B2": 490, "B3": 560, "B4": 665, "B5": 705, "B6": 740,
    "B7": 783, "B8": 842, "B8A": 865, "B9": 940, "B11": 1610, "B12": 2190,
}

RESOLUTION_CLASS = {
    "B2": "10m", "B3": "10m", "B4": "10m", "B8": "10m",
    "B5": "20m", "B6": "20m", "B7": "20m", "B8A": "20m", "B11": "20m", "B12": "20m",
    "B1": "60m", "B9": "60m",
}

# 20 m target band -> 10 m band that supplies its spatial reference
CHANNEL_SR_REFERENCE = {
    "B5": "B4", "B6": "B4", "B7": "B4",
    "B8A": "B8",
    "B11": "B2", "B12": "B2",
}

BAND_CODE = {b: i for i, b in enumerate(BAND_ORDER)}


def bands_of_class(res):
    return tuple(b for b in BAND_ORDER if RESOLUTION_CLASS[b] == res)


@dataclass(frozen=True)
class BandMap:
    """Band ordering of a tile plus the target -> reference mapping used by Channel SR."""

    band_ids: tuple = BAND_ORDER
    reference: tuple = tuple(CHANNEL_SR_REFERENCE.items())

    def __post_init__(self):
        ids = tuple(self.band_ids)
        object.__setattr__(self, "band_ids", ids)
        ref = dict(self.reference)
        for target, src in ref.items():
            if target not in ids or src not in ids:
                raise KeyError(f"band metadata missing for {target!r} -> {src!r}")
            if RESOLUTION_CLASS.get(src) != "10m":
                raise ValueError(f"reference band {src} is not a 10m band")

    def ref(self, band):
        return dict(self.reference)[band]

    @property
    def targets(self):
        return tuple(t for t, _ in self.reference)

    def index_pairs(self):
        """``(target_indices, reference_indices)`` into the channel axis."""
        pos = {b: i for i, b in enumerate(self.band_ids)}
        tgt = [pos[t] for t, _ in self.reference]
        src = [pos[s] for _, s in self.reference]
        return np.array(tgt, dtype=np.intp), np.array(src, dtype=np.intp)


@dataclass
class Tile:
    """A 12-band image with its band identifiers."""

    bands: np.ndarray
    band_ids: tuple = BAND_ORDER

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=np.float64)
        self.band_ids = tuple(self.band_ids)
        if self.bands.ndim != 3:
            raise ShapeError(f"tile must be [C, H, W], got {self.bands.shape}", dim="rank")
        if self.bands.shape[0] != len(self.band_ids):
            raise ShapeError(f"{self.bands.shape[0]} channels but {len(self.band_ids)} band ids",
                             dim="C", expected=len(self.band_ids), actual=self.bands.shape[0])
        unknown = [b for b in self.band_ids if b not in WAVELENGTH_NM]
        if unknown:
            raise KeyError(f"unknown band ids {unknown}")

    @property
    def wavelengths_nm(self):
        return tuple(WAVELENGTH_NM[b] for b in self.band_ids)

    @property
    def resolution_class(self):
        return tuple(RESOLUTION_CLASS[b] for b in self.band_ids)

    @property
    def shape(self):
        return self.bands.shape
