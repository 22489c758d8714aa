"""Core raster types, dataset-level normalization, class-schema remapping,
tiling, and overlap-voting merge."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

N_CLASSES = 4
LABEL_GROUND = 0
LABEL_TREE = 1
LABEL_BUILDING = 2
LABEL_WATER = 3
LABEL_VOID = 255
VALID_LABEL_CODES = (0, 1, 2, 3, 255)

# nodata sentinel used for float32 outputs of normalization (outside [0, 1])
NORMALIZED_NODATA = -1.0


class Dtype(IntEnum):
    """Sample types supported by the toolkit and the XRAS container."""

    U8 = 0
    U16 = 1
    F32 = 2

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype({Dtype.U8: np.uint8, Dtype.U16: np.uint16,
                         Dtype.F32: np.float32}[self])

    @classmethod
    def from_numpy(cls, dt) -> "Dtype":
        dt = np.dtype(dt)
        for member in cls:
            if member.numpy_dtype == dt:
                return member
        raise ValueError(f"unsupported sample dtype: {dt}")


class BandRole(IntEnum):
    OTHER = 0
    RED = 1
    GREEN = 2
    BLUE = 3
    NIR = 4
    DSM = 5
    AGL = 6


HEIGHT_ROLES = (BandRole.DSM, BandRole.AGL)

_ROLE_ALIASES = {
    "r": BandRole.RED, "red": BandRole.RED,
    "g": BandRole.GREEN, "green": BandRole.GREEN,
    "b": BandRole.BLUE, "blue": BandRole.BLUE,
    "nir": BandRole.NIR,
    "dsm": BandRole.DSM,
    "agl": BandRole.AGL,
    "other": BandRole.OTHER,
}


def parse_role(name: str) -> BandRole:
    try:
        return _ROLE_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown band role: {name!r}") from None


@dataclass
class MultibandRaster:
    """Band-sequential numeric image with nodata semantics.

    `data` is (bands, height, width), C order. Height bands (DSM/AGL)
    carry meters while `normalized` is False.
    """

    data: np.ndarray
    band_roles: tuple[BandRole, ...]
    nodata: float | None = None
    gsd: float | None = None
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError("raster data must be (bands, height, width)")
        Dtype.from_numpy(self.data.dtype)  # validates the dtype
        self.band_roles = tuple(BandRole(r) for r in self.band_roles)
        if len(self.band_roles) != self.data.shape[0]:
            raise ValueError("band_roles length does not match band count")
        named = [r for r in self.band_roles if r != BandRole.OTHER]
        if len(named) != len(set(named)):
            raise ValueError("at most one band per role (except OTHER)")
        if self.data.shape[1] < 1 or self.data.shape[2] < 1:
            raise ValueError("raster must be at least 1x1")
        if self.nodata is not None:
            info_ok = True
            if self.dtype != Dtype.F32:
                limits = np.iinfo(self.dtype.numpy_dtype)
                info_ok = limits.min <= self.nodata <= limits.max
            if not info_ok:
                raise ValueError("nodata value outside the dtype's range")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> Dtype:
        return Dtype.from_numpy(self.data.dtype)

    def band_index(self, role: BandRole) -> int:
        for i, r in enumerate(self.band_roles):
            if r == role:
                return i
        raise ValueError(f"raster has no {role.name} band")

    def has_band(self, role: BandRole) -> bool:
        return role in self.band_roles

    def band(self, role: BandRole) -> np.ndarray:
        return self.data[self.band_index(role)]

    def valid_mask(self, roles: Sequence[BandRole] | None = None) -> np.ndarray:
        """True where none of the selected bands is nodata."""
        if self.nodata is None:
            return np.ones((self.height, self.width), dtype=bool)
        if roles is None:
            stack = self.data
        else:
            stack = self.data[[self.band_index(r) for r in roles]]
        return ~np.any(stack == self.nodata, axis=0)


@dataclass
class LabelMap:
    """4-class (+void) categorical map; codes in {0,1,2,3,255}."""

    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.ndim != 2:
            raise ValueError("label codes must be a 2D array")
        bad = ~np.isin(self.codes, VALID_LABEL_CODES)
        if bad.any():
            offending = sorted(int(v) for v in np.unique(self.codes[bad]))
            raise ValueError(f"label codes outside schema: {offending}")

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    def valid_mask(self) -> np.ndarray:
        return self.codes != LABEL_VOID


@dataclass
class ProbabilityMap:
    """Per-pixel class probabilities plus an accumulation-count plane."""

    probs: np.ndarray        # (4, h, w) float32
    weight: np.ndarray       # (h, w) int32 coverage count

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        self.weight = np.asarray(self.weight, dtype=np.int32)
        if self.probs.ndim != 3 or self.probs.shape[0] != N_CLASSES:
            raise ValueError("probability stack must be (4, height, width)")
        if self.weight.shape != self.probs.shape[1:]:
            raise ValueError("weight plane does not match probability stack")
        covered = self.weight > 0
        if covered.any():
            sums = self.probs.sum(axis=0)[covered]
            if np.any(np.abs(sums - 1.0) > 1e-3):
                raise ValueError("probabilities must sum to 1 within 1e-3")
            if self.probs.min() < 0.0 or self.probs.max() > 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def width(self) -> int:
        return self.probs.shape[2]

    def argmax_labels(self) -> LabelMap:
        """Per-pixel argmax with ties broken to the lowest class code;
        uncovered pixels become void."""
        labels = np.argmax(self.probs, axis=0).astype(np.uint8)
        labels[self.weight == 0] = LABEL_VOID
        return LabelMap(labels)


class Window(NamedTuple):
    x: int
    y: int
    width: int
    height: int


@dataclass(frozen=True)
class TilingPlan:
    patch_size: int
    stride: int
    windows: tuple[Window, ...]
    undersized: bool = False


class ClassLookup:
    """Total mapping from source label codes to the 5-code target schema."""

    def __init__(self, entries: Mapping[int, int]):
        self.entries = {int(k): int(v) for k, v in entries.items()}
        for src, dst in self.entries.items():
            if not 0 <= src <= 65535:
                raise ValueError(f"source code out of range: {src}")
            if dst not in VALID_LABEL_CODES:
                raise ValueError(f"target code outside schema: {dst}")

    @classmethod
    def from_json(cls, text: str) -> "ClassLookup":
        doc = json.loads(text)
        return cls(doc["map"])

    def to_json(self) -> str:
        body = ", ".join(f'"{k}": {v}' for k, v in sorted(self.entries.items()))
        return '{"map": {%s}}' % body


class TruncationBounds(NamedTuple):
    lo: float
    hi: float
    degenerate: bool = False


_HIST_BINS = 65536


def _band_samples(raster: MultibandRaster, role: BandRole) -> np.ndarray:
    values = raster.band(role).ravel()
    if raster.nodata is not None:
        values = values[values != raster.nodata]
    return values


def compute_truncation_bounds(rasters: Sequence[MultibandRaster], role: BandRole,
                              lower_pct: float = 2.0,
                              upper_pct: float = 2.0) -> TruncationBounds:
    """Dataset-level histogram-truncation bounds for one band role.

    Pools non-nodata samples of the band across all rasters, cuts
    floor(n * pct / 100) samples from each end and returns the extremes of
    what remains. Integer dtypes use an exact 65536-bin histogram; float32
    uses a two-pass (min-max, then 65536-bin) histogram, so float bounds
    are accurate to one bin width.
    """
    if lower_pct < 0 or upper_pct < 0:
        raise ValueError("percentages must be non-negative")
    if lower_pct + upper_pct >= 100:
        raise ValueError("lower_pct + upper_pct must be below 100")
    with_band = [r for r in rasters if r.has_band(role)]
    if not with_band:
        raise ValueError(f"no raster contains a {role.name} band")

    integer_input = all(r.dtype != Dtype.F32 for r in with_band)
    if integer_input:
        hist = np.zeros(_HIST_BINS, dtype=np.int64)
        for r in with_band:
            vals = _band_samples(r, role)
            if vals.size:
                hist += np.bincount(vals.astype(np.int64), minlength=_HIST_BINS)
        n = int(hist.sum())
        if n == 0:
            raise ValueError("no valid samples")
        cum = np.cumsum(hist)
        k_lo = math.floor(n * lower_pct / 100.0)
        k_hi = math.floor(n * upper_pct / 100.0)
        lo_idx = k_lo
        hi_idx = max(lo_idx, n - 1 - k_hi)
        lo = float(np.searchsorted(cum, lo_idx, side="right"))
        hi = float(np.searchsorted(cum, hi_idx, side="right"))
        return TruncationBounds(lo, hi, degenerate=lo == hi)

    # float path: pass 1 global range, pass 2 histogram
    vmin = np.inf
    vmax = -np.inf
    n = 0
    for r in with_band:
        vals = _band_samples(r, role)
        if vals.size:
            vmin = min(vmin, float(vals.min()))
            vmax = max(vmax, float(vals.max()))
            n += vals.size
    if n == 0:
        raise ValueError("no valid samples")
    if vmin == vmax:
        return TruncationBounds(vmin, vmax, degenerate=True)
    width = (vmax - vmin) / _HIST_BINS
    hist = np.zeros(_HIST_BINS, dtype=np.int64)
    for r in with_band:
        vals = _band_samples(r, role).astype(np.float64)
        if vals.size:
            bins = np.clip(((vals - vmin) / (vmax - vmin) * _HIST_BINS).astype(np.int64),
                           0, _HIST_BINS - 1)
            hist += np.bincount(bins, minlength=_HIST_BINS)
    cum = np.cumsum(hist)
    k_lo = math.floor(n * lower_pct / 100.0)
    k_hi = math.floor(n * upper_pct / 100.0)
    lo_bin = int(np.searchsorted(cum, k_lo, side="right"))
    hi_bin = int(np.searchsorted(cum, max(k_lo, n - 1 - k_hi), side="right"))
    lo = vmin + lo_bin * width
    hi = min(vmax, vmin + (hi_bin + 1) * width)
    if hi < lo:
        hi = lo
    return TruncationBounds(lo, hi, degenerate=lo == hi)


def normalize_truncate(raster: MultibandRaster,
                       bounds: Mapping[int, tuple | TruncationBounds],
                       bands: Sequence[int] | None = None) -> MultibandRaster:
    """Rescale bands to [0, 1] with clamping: v' = clip((v-lo)/(hi-lo), 0, 1).

    `bounds` maps band indices to (lo, hi) pairs; `bands` defaults to the
    keys of `bounds`. Bands without bounds are passed through as float32.
    Nodata pixels become the NORMALIZED_NODATA sentinel. Degenerate bounds
    (lo == hi) send all valid pixels to 0.
    """
    requested = list(bounds) if bands is None else list(bands)
    missing = [b for b in requested if b not in bounds]
    if missing:
        raise ValueError(f"missing bounds for bands {missing}")
    out = raster.data.astype(np.float32).copy()
    invalid = None
    if raster.nodata is not None:
        invalid = raster.data == raster.nodata
    for b in requested:
        lo, hi = float(bounds[b][0]), float(bounds[b][1])
        band = raster.data[b].astype(np.float64)
        if hi == lo:
            scaled = np.zeros_like(band)
        else:
            scaled = np.clip((band - lo) / (hi - lo), 0.0, 1.0)
        out[b] = scaled.astype(np.float32)
    new_nodata = None
    if invalid is not None:
        out[invalid] = NORMALIZED_NODATA
        new_nodata = NORMALIZED_NODATA
    return MultibandRaster(out, raster.band_roles, nodata=new_nodata,
                           gsd=raster.gsd, normalized=True)


def remap_labels(labels: np.ndarray | MultibandRaster, lookup: ClassLookup) -> LabelMap:
    """Substitute raw label codes through the lookup into the target schema."""
    if isinstance(labels, MultibandRaster):
        if labels.bands != 1:
            raise ValueError("label raster must be single band")
        arr = labels.data[0]
    else:
        arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError("labels must be a 2D array")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("labels must be integer typed")
    present = np.unique(arr)
    unmapped = [int(c) for c in present if int(c) not in lookup.entries]
    if unmapped:
        raise ValueError(f"unmapped label codes: {unmapped}")
    table = np.zeros(int(present.max()) + 1, dtype=np.uint8)
    for src, dst in lookup.entries.items():
        if src < table.size:
            table[src] = dst
    return LabelMap(table[arr.astype(np.int64)])


def _axis_origins(dim: int, patch: int, stride: int) -> tuple[list[int], bool]:
    if dim <= patch:
        return [0], dim < patch
    origins = []
    pos = 0
    while pos + patch <= dim:
        origins.append(pos)
        pos += stride
    if origins[-1] + patch < dim:
        origins.append(dim - patch)
    return origins, False


def plan_tiles(width: int, height: int, patch_size: int = 512,
               overlap: float = 0.5) -> TilingPlan:
    """Grid of patch windows covering the raster.

    Origins step by stride = floor(patch * (1 - overlap)), minimum 1; a
    final window clamped to dim - patch is added when the stride grid
    stops short. Rasters smaller than the patch yield a single undersized
    window.
    """
    if width < 1 or height < 1:
        raise ValueError("raster dimensions must be at least 1")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    if patch_size < 1:
        raise ValueError("patch_size must be at least 1")
    stride = max(1, int(patch_size * (1.0 - overlap)))
    xs, under_x = _axis_origins(width, patch_size, stride)
    ys, under_y = _axis_origins(height, patch_size, stride)
    windows = tuple(Window(x, y, min(patch_size, width), min(patch_size, height))
                    for y in ys for x in xs)
    return TilingPlan(patch_size, stride, windows, undersized=under_x or under_y)


def extract_patch(stack: np.ndarray, window: Window) -> np.ndarray:
    """Slice a (bands, h, w) stack or (h, w) plane to a window."""
    if stack.ndim == 2:
        return stack[window.y:window.y + window.height,
                     window.x:window.x + window.width]
    return stack[:, window.y:window.y + window.height,
                 window.x:window.x + window.width]


def merge_probability_patches(patches: Iterable[tuple[Window, np.ndarray]],
                              width: int, height: int
                              ) -> tuple[ProbabilityMap, LabelMap]:
    """Probability-voting merge of overlapping per-class patches.

    Per-pixel class probability is the arithmetic mean over covering
    patches; labels are the argmax with ties to the lowest class code.
    Accumulation happens in a canonical patch order (sorted by window,
    then payload digest), so the result is bit-identical under any patch
    submission order or worker scheduling. Pixels covered by no patch are
    reported and set void.
    """
    items = []
    for window, probs in patches:
        probs = np.asarray(probs, dtype=np.float32)
        if probs.shape != (N_CLASSES, window.height, window.width):
            raise ValueError(f"patch shaped {probs.shape} does not match {window}")
        if window.x < 0 or window.y < 0 or \
                window.x + window.width > width or window.y + window.height > height:
            raise ValueError(f"window {window} exceeds raster bounds")
        sums = probs.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > 1e-3):
            raise ValueError("patch probabilities must sum to 1 within 1e-3")
        digest = hashlib.blake2b(probs.tobytes(), digest_size=8).hexdigest()
        items.append(((window.y, window.x, window.height, window.width, digest),
                      window, probs))
    items.sort(key=lambda it: it[0])

    acc = np.zeros((N_CLASSES, height, width), dtype=np.float64)
    weight = np.zeros((height, width), dtype=np.int32)
    for _, window, probs in items:
        ys = slice(window.y, window.y + window.height)
        xs = slice(window.x, window.x + window.width)
        acc[:, ys, xs] += probs
        weight[ys, xs] += 1

    covered = weight > 0
    if not covered.all():
        log.warning("merge: %d pixels covered by no patch set to void",
                    int((~covered).sum()))
    divisor = np.where(covered, weight, 1).astype(np.float64)
    merged = (acc / divisor).astype(np.float32)
    merged[:, ~covered] = 0.0
    pmap = ProbabilityMap(merged, weight)
    return pmap, pmap.argmax_labels()
