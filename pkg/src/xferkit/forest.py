"""GLCM texture features and the random-forest pixel classifier used as
the traditional desk-scale baseline."""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as kernels
from .raster import (N_CLASSES, BandRole, LabelMap, MultibandRaster,
                     ProbabilityMap)

GLCM_STAT_NAMES = ("contrast", "dissimilarity", "homogeneity",
                   "energy", "entropy", "correlation")
DEFAULT_OFFSETS = ((0, 1), (1, 0), (1, 1), (-1, 1))   # (dy, dx), symmetrized

_LUMA = (0.299, 0.587, 0.114)


@dataclass
class GlcmParams:
    window: int = 13
    levels: int = 32
    offsets: tuple[tuple[int, int], ...] = DEFAULT_OFFSETS
    stats: tuple[str, ...] = GLCM_STAT_NAMES

    def __post_init__(self):
        if self.window < 3 or self.window % 2 != 1:
            raise ValueError("GLCM window must be odd and >= 3")
        if self.levels < 2:
            raise ValueError("need at least 2 gray levels")
        if len(self.stats) != 6:
            raise ValueError("the texture feature vector has exactly 6 statistics")
        if not self.offsets:
            raise ValueError("need at least one offset")


@dataclass
class RfHyperparams:
    n_trees: int = 500
    max_depth: int = 20
    min_samples_leaf: int = 1000
    min_samples_split: int = 4000
    n_samples: int = 4_000_000
    features_per_split: int | None = None    # default ceil(sqrt(d))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("need at least one tree")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2 * self.min_samples_leaf:
            raise ValueError("min_samples_split must be >= 2 * min_samples_leaf")

    def k_features(self, d: int) -> int:
        if self.features_per_split is not None:
            return min(self.features_per_split, d)
        return min(d, math.ceil(math.sqrt(d)))


@dataclass
class PixelDataset:
    features: np.ndarray    # (n, d) float32
    labels: np.ndarray      # (n,) uint8, classes 0..3 only

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 2 or self.labels.ndim != 1 or \
                self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (n, d) with matching labels")
        if self.labels.size and self.labels.max() >= N_CLASSES:
            raise ValueError("void labels are not trainable")

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES).astype(np.int64)


@dataclass
class Tree:
    feature: np.ndarray     # int32, -1 at leaves
    threshold: np.ndarray   # float64
    left: np.ndarray        # int32
    right: np.ndarray       # int32
    counts: np.ndarray      # int64 (n_nodes, 4); zero rows at internal nodes
    leaf_probs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.feature = np.ascontiguousarray(self.feature, dtype=np.int32)
        self.threshold = np.ascontiguousarray(self.threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(self.left, dtype=np.int32)
        self.right = np.ascontiguousarray(self.right, dtype=np.int32)
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        totals = self.counts.sum(axis=1)
        leaves = self.feature < 0
        if np.any(totals[leaves] == 0):
            raise ValueError("leaf histograms must be non-empty")
        probs = np.zeros((self.feature.size, N_CLASSES), dtype=np.float64)
        probs[leaves] = self.counts[leaves] / totals[leaves, None]
        self.leaf_probs = probs

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass
class Forest:
    trees: list[Tree]
    d: int
    n_classes: int = N_CLASSES

    def __post_init__(self):
        for tree in self.trees:
            internal = tree.feature >= 0
            if internal.any() and tree.feature[internal].max() >= self.d:
                raise ValueError("tree references a feature index >= d")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Mean of per-tree leaf class distributions; float32 (n, 4)."""
        X = np.ascontiguousarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"feature dimensionality {X.shape} does not match d={self.d}")
        acc = np.zeros((X.shape[0], self.n_classes), dtype=np.float64)
        for tree in self.trees:
            leaf = kernels.tree_apply(tree.feature, tree.threshold,
                                      tree.left, tree.right, X)
            acc += tree.leaf_probs[leaf]
        acc /= self.n_trees
        return acc.astype(np.float32)


# ---------------------------------------------------------------------------
# GLCM features
# ---------------------------------------------------------------------------

def quantize_luminance(raster: MultibandRaster, levels: int) -> np.ndarray:
    """Quantize 0.299R + 0.587G + 0.114B into `levels` bins; -1 where any
    of the three bands is nodata. Expects a raster normalized to [0, 1]."""
    r = raster.band(BandRole.RED).astype(np.float64)
    g = raster.band(BandRole.GREEN).astype(np.float64)
    b = raster.band(BandRole.BLUE).astype(np.float64)
    luma = np.clip(_LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b, 0.0, 1.0)
    q = np.minimum((luma * levels).astype(np.int32), levels - 1)
    valid = raster.valid_mask((BandRole.RED, BandRole.GREEN, BandRole.BLUE))
    q[~valid] = -1
    return q


def glcm_feature_image(levels_img: np.ndarray, params: GlcmParams) -> np.ndarray:
    """Windowed GLCM statistics at float64 precision, (6, h, w)."""
    offsets = np.asarray(params.offsets, dtype=np.int64)
    return kernels.glcm_feature_image(levels_img, params.window,
                                      params.levels, offsets)


def glcm_features(raster: MultibandRaster,
                  params: GlcmParams | None = None) -> MultibandRaster:
    """Six-band float32 texture feature raster (see GLCM_STAT_NAMES).

    Border pixels use the window cropped to the image; pixels whose
    cropped window holds no valid pair get all six features set to 0.
    """
    params = params or GlcmParams()
    if params.window > min(raster.height, raster.width):
        raise ValueError("GLCM window larger than the raster")
    q = quantize_luminance(raster, params.levels)
    feats = glcm_feature_image(q, params)
    return MultibandRaster(feats.astype(np.float32),
                           (BandRole.OTHER,) * 6, gsd=raster.gsd)


def stack_features(raster: MultibandRaster, glcm: MultibandRaster | np.ndarray,
                   height: MultibandRaster | np.ndarray | None = None) -> np.ndarray:
    """Per-pixel feature stack: R, G, B, NIR, six GLCM statistics, and the
    height plane last when present (d = 10 or 11), float32 (d, h, w)."""
    bands = [raster.band(role) for role in
             (BandRole.RED, BandRole.GREEN, BandRole.BLUE, BandRole.NIR)]
    glcm_data = glcm.data if isinstance(glcm, MultibandRaster) else np.asarray(glcm)
    if glcm_data.shape[0] != 6:
        raise ValueError("expected a 6-band GLCM feature stack")
    planes = [b.astype(np.float32) for b in bands]
    planes.extend(glcm_data.astype(np.float32))
    if height is not None:
        if isinstance(height, MultibandRaster):
            role = BandRole.AGL if height.has_band(BandRole.AGL) else BandRole.DSM
            plane = height.band(role)
        else:
            plane = np.asarray(height)
        planes.append(plane.astype(np.float32))
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ValueError("feature planes are not co-registered")
    return np.ascontiguousarray(np.stack(planes, axis=0))


# ---------------------------------------------------------------------------
# sampling and training
# ---------------------------------------------------------------------------

def sample_pixels(feature_stacks: Sequence[np.ndarray],
                  labels: Sequence[LabelMap], n_samples: int, seed: int,
                  stratified: bool = False) -> PixelDataset:
    """Random sample without replacement over non-void pixels of all scenes.

    Deterministic given the seed. Asks for more samples than exist and you
    get the full set plus a warning. `stratified` allocates the budget
    proportionally to class frequencies.
    """
    if len(feature_stacks) != len(labels) or not feature_stacks:
        raise ValueError("need matching, non-empty feature and label lists")
    feats_flat = []
    labs_flat = []
    for stack, lab in zip(feature_stacks, labels):
        stack = np.asarray(stack)
        if stack.shape[1:] != lab.codes.shape:
            raise ValueError("features and labels are not co-registered")
        keep = lab.valid_mask().ravel()
        feats_flat.append(stack.reshape(stack.shape[0], -1).T[keep])
        labs_flat.append(lab.codes.ravel()[keep])
    features = np.concatenate(feats_flat, axis=0)
    y = np.concatenate(labs_flat, axis=0)
    total = y.size
    if total == 0:
        raise ValueError("no non-void pixels to sample")
    rng = np.random.default_rng(seed)
    if n_samples >= total:
        if n_samples > total:
            warnings.warn(f"requested {n_samples} samples but only {total} "
                          "non-void pixels exist; using all of them")
        return PixelDataset(features, y)
    if not stratified:
        pick = np.sort(rng.choice(total, size=n_samples, replace=False))
        return PixelDataset(features[pick], y[pick])
    counts = np.bincount(y, minlength=N_CLASSES)
    quota = np.floor(n_samples * counts / total).astype(np.int64)
    frac = n_samples * counts / total - quota
    for c in np.argsort(-frac, kind="stable"):
        if quota.sum() >= n_samples:
            break
        if quota[c] < counts[c]:
            quota[c] += 1
    picks = []
    for c in range(N_CLASSES):
        pool = np.nonzero(y == c)[0]
        if quota[c] > 0:
            picks.append(pool[rng.choice(pool.size, size=int(quota[c]),
                                         replace=False)])
    pick = np.sort(np.concatenate(picks))
    return PixelDataset(features[pick], y[pick])


def _grow_tree(X: np.ndarray, y: np.ndarray, hp: RfHyperparams, k: int,
               rng: np.random.Generator) -> Tree:
    n, d = X.shape
    boot = rng.integers(0, n, size=n, dtype=np.int64)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        hist = np.bincount(y[idx], minlength=N_CLASSES).astype(np.int64)
        counts.append(hist)
        pure = int((hist > 0).sum()) <= 1
        if depth >= hp.max_depth or idx.size < hp.min_samples_split or pure:
            return node
        feats = rng.choice(d, size=k, replace=False)
        f, thr, ok = kernels.best_split(X, y, idx, feats,
                                        hp.min_samples_leaf, N_CLASSES)
        if not ok:
            return node
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        counts[node] = np.zeros(N_CLASSES, dtype=np.int64)
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(boot, 0)
    return Tree(np.array(feature, dtype=np.int32),
                np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int32),
                np.array(right, dtype=np.int32),
                np.stack(counts).astype(np.int64))


def rf_train(data: PixelDataset, hp: RfHyperparams) -> Forest:
    """Train the forest: per-tree bootstrap, CART splits minimizing Gini
    over a random feature subset per node, midpoint thresholds.

    Deterministic under a fixed seed; tree i draws from its own stream
    seeded (seed, i), so the first k trees of any run coincide.
    """
    if data.n == 0:
        raise ValueError("empty training set")
    if data.n < hp.min_samples_split:
        warnings.warn("training set smaller than min_samples_split; "
                      "trees degenerate to single leaves")
    k = hp.k_features(data.d)
    trees = [
        _grow_tree(data.features, data.labels, hp, k,
                   np.random.default_rng([hp.seed, i]))
        for i in range(hp.n_trees)
    ]
    return Forest(trees, d=data.d)


def rf_predict(forest: Forest, features: np.ndarray | MultibandRaster) -> ProbabilityMap:
    """Pixel-wise class probabilities for a (d, h, w) feature stack."""
    stack = features.data if isinstance(features, MultibandRaster) else np.asarray(features)
    if stack.ndim != 3 or stack.shape[0] != forest.d:
        raise ValueError(f"feature stack shaped {stack.shape} does not match d={forest.d}")
    d, h, w = stack.shape
    X = np.ascontiguousarray(stack.reshape(d, -1).T, dtype=np.float32)
    probs = forest.predict_matrix(X)
    cube = np.ascontiguousarray(probs.T.reshape(N_CLASSES, h, w))
    return ProbabilityMap(cube, np.ones((h, w), dtype=np.int32))


# ---------------------------------------------------------------------------
# serialization: versioned binary container plus a JSON debug dump
# ---------------------------------------------------------------------------

FOREST_MAGIC = b"XRFC"
FOREST_VERSION = 1
_F_HEADER = struct.Struct("<4sHHIH")
_NODE_INTERNAL = struct.Struct("<BHd")
_NODE_LEAF = struct.Struct("<B4Q")


def _emit_tree(tree: Tree, out: bytearray) -> None:
    out.extend(struct.pack("<I", tree.n_nodes))

    def emit(node: int) -> None:
        f = int(tree.feature[node])
        if f < 0:
            out.extend(_NODE_LEAF.pack(1, *(int(c) for c in tree.counts[node])))
            return
        out.extend(_NODE_INTERNAL.pack(0, f, float(tree.threshold[node])))
        emit(int(tree.left[node]))
        emit(int(tree.right[node]))

    emit(0)


def save_forest(forest: Forest, path: str | Path | None = None) -> bytes:
    out = bytearray()
    out += _F_HEADER.pack(FOREST_MAGIC, FOREST_VERSION, forest.d,
                          forest.n_trees, forest.n_classes)
    for tree in forest.trees:
        _emit_tree(tree, out)
    blob = bytes(out)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def load_forest(src: str | Path | bytes) -> Forest:
    buf = src if isinstance(src, (bytes, bytearray)) else Path(src).read_bytes()
    if len(buf) < _F_HEADER.size:
        raise ValueError("corrupt file: shorter than the header")
    magic, version, d, n_trees, n_classes = _F_HEADER.unpack_from(buf, 0)
    if magic != FOREST_MAGIC or version != FOREST_VERSION:
        raise ValueError("unsupported format")
    if n_classes != N_CLASSES:
        raise ValueError("unsupported format: class count mismatch")
    pos = _F_HEADER.size
    trees = []
    for _ in range(n_trees):
        try:
            (n_nodes,) = struct.unpack_from("<I", buf, pos)
        except struct.error:
            raise ValueError("corrupt file: truncated tree header") from None
        pos += 4
        feature = np.full(n_nodes, -1, dtype=np.int32)
        threshold = np.zeros(n_nodes, dtype=np.float64)
        left = np.full(n_nodes, -1, dtype=np.int32)
        right = np.full(n_nodes, -1, dtype=np.int32)
        counts = np.zeros((n_nodes, N_CLASSES), dtype=np.int64)
        next_id = 0

        def read_node() -> int:
            nonlocal pos, next_id
            if pos >= len(buf):
                raise ValueError("corrupt file: truncated node stream")
            node = next_id
            next_id += 1
            if node >= n_nodes:
                raise ValueError("corrupt file: more nodes than declared")
            kind = buf[pos]
            try:
                if kind == 0:
                    _, f, thr = _NODE_INTERNAL.unpack_from(buf, pos)
                    pos += _NODE_INTERNAL.size
                elif kind == 1:
                    rec = _NODE_LEAF.unpack_from(buf, pos)
                    pos += _NODE_LEAF.size
                else:
                    raise ValueError("corrupt file: unknown node kind")
            except struct.error:
                raise ValueError("corrupt file: truncated node stream") from None
            if kind == 0:
                feature[node] = f
                threshold[node] = thr
                left[node] = read_node()
                right[node] = read_node()
            else:
                counts[node] = rec[1:]
            return node

        read_node()
        if next_id != n_nodes:
            raise ValueError("corrupt file: node count mismatch")
        trees.append(Tree(feature, threshold, left, right, counts))
    if pos != len(buf):
        raise ValueError("corrupt file: trailing bytes")
    return Forest(trees, d=d)


def forest_to_json(forest: Forest) -> str:
    doc = {
        "version": FOREST_VERSION,
        "d": forest.d,
        "n_trees": forest.n_trees,
        "n_classes": forest.n_classes,
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "counts": tree.counts.tolist(),
            }
            for tree in forest.trees
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
