"""Numpy implementations of the hot kernels.

This is the fallback lane used when the compiled extension is unavailable
(see `xferkit._kernels`). Every function here has the same contract as its
compiled twin:

* `grey_erode_square`, `reconstruct_dilation` and `tree_apply` are exact
  (comparison-only arithmetic), so both lanes return bit-identical arrays.
* `best_split` evaluates the split score with the same float64 operation
  order as the compiled lane, so grown trees are bit-identical too.
* `glcm_feature_image` tallies identical integer pair counts; the derived
  statistics may differ from the compiled lane by float64 summation order
  only (well below 1e-9).
"""

from __future__ import annotations

import numpy as np

NAME = "pure"


# ---------------------------------------------------------------------------
# grayscale morphology
# ---------------------------------------------------------------------------

def grey_erode_square(img: np.ndarray, size: int) -> np.ndarray:
    """Minimum filter with a size x size square structuring element.

    Out-of-bounds positions are ignored (equivalent to replicate padding
    for a minimum). Separable: one sliding-min pass per axis.
    """
    if size % 2 != 1 or size < 1:
        raise ValueError("structuring element size must be odd and >= 1")
    out = np.asarray(img, dtype=np.float32)
    r = size // 2
    for axis in (0, 1):
        if out.shape[axis] == 1 or r == 0:
            continue
        padded = np.pad(out, [(r, r) if a == axis else (0, 0) for a in (0, 1)],
                        mode="constant", constant_values=np.inf)
        acc = None
        for k in range(size):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + out.shape[axis])
            view = padded[tuple(sl)]
            acc = view.copy() if acc is None else np.minimum(acc, view)
        out = acc
    return np.ascontiguousarray(out, dtype=np.float32)


def reconstruct_dilation(marker: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Morphological reconstruction by dilation, 8-connectivity.

    Sequential raster-scan algorithm: alternate forward (top-left to
    bottom-right) and backward passes, each propagating maxima clipped by
    the mask, until a full pair of passes changes nothing. Only max/min
    comparisons are used, so the result is exact.
    """
    marker = np.asarray(marker, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if marker.shape != mask.shape:
        raise ValueError("marker and mask shapes differ")
    if np.any(marker > mask):
        raise ValueError("marker must be <= mask everywhere")
    j = np.minimum(marker, mask).copy()
    h, w = j.shape
    while True:
        changed = False
        # forward pass: north neighbors vectorized, west propagation scalar
        for y in range(h):
            cand = j[y].copy()
            if y > 0:
                up = j[y - 1]
                np.maximum(cand, up, out=cand)
                np.maximum(cand[1:], up[:-1], out=cand[1:])
                np.maximum(cand[:-1], up[1:], out=cand[:-1])
            row = cand.tolist()
            mrow = mask[y].tolist()
            cur = row[0] if row[0] <= mrow[0] else mrow[0]
            row[0] = cur
            for x in range(1, w):
                v = row[x]
                if cur > v:
                    v = cur
                mv = mrow[x]
                if v > mv:
                    v = mv
                row[x] = v
                cur = v
            new = np.array(row, dtype=np.float32)
            if not changed and not np.array_equal(new, j[y]):
                changed = True
            j[y] = new
        # backward pass: south neighbors, east propagation
        for y in range(h - 1, -1, -1):
            cand = j[y].copy()
            if y < h - 1:
                dn = j[y + 1]
                np.maximum(cand, dn, out=cand)
                np.maximum(cand[1:], dn[:-1], out=cand[1:])
                np.maximum(cand[:-1], dn[1:], out=cand[:-1])
            row = cand.tolist()
            mrow = mask[y].tolist()
            cur = row[w - 1] if row[w - 1] <= mrow[w - 1] else mrow[w - 1]
            row[w - 1] = cur
            for x in range(w - 2, -1, -1):
                v = row[x]
                if cur > v:
                    v = cur
                mv = mrow[x]
                if v > mv:
                    v = mv
                row[x] = v
                cur = v
            new = np.array(row, dtype=np.float32)
            if not changed and not np.array_equal(new, j[y]):
                changed = True
            j[y] = new
        if not changed:
            return j


# ---------------------------------------------------------------------------
# GLCM windowed statistics
# ---------------------------------------------------------------------------

def _box_gather(integral: np.ndarray, r: int, dy: int, dx: int) -> np.ndarray:
    """Per-center sum of an anchor image over the window-constrained box.

    For direction (dy, dx) the anchors p contributing to center c satisfy
    both p and p+d inside the centered (2r+1)^2 window, i.e.
    p in [c - r + max(0, -d), c + r - max(0, d)] per axis.
    """
    h = integral.shape[0] - 1
    w = integral.shape[1] - 1
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - r + max(0, -dy), 0, h)
    y1 = np.clip(ys + r - max(0, dy) + 1, 0, h)
    x0 = np.clip(xs - r + max(0, -dx), 0, w)
    x1 = np.clip(xs + r - max(0, dx) + 1, 0, w)
    y1 = np.maximum(y1, y0)
    x1 = np.maximum(x1, x0)
    return (integral[np.ix_(y1, x1)] - integral[np.ix_(y0, x1)]
            - integral[np.ix_(y1, x0)] + integral[np.ix_(y0, x0)])


def _integral(img: np.ndarray) -> np.ndarray:
    out = np.zeros((img.shape[0] + 1, img.shape[1] + 1), dtype=img.dtype)
    np.cumsum(img, axis=0, out=out[1:, 1:])
    np.cumsum(out[1:, 1:], axis=1, out=out[1:, 1:])
    return out


def glcm_feature_image(levels_img: np.ndarray, window: int, levels: int,
                       offsets: np.ndarray) -> np.ndarray:
    """Per-pixel Haralick statistics from a symmetric windowed GLCM.

    `levels_img` holds quantized gray levels, -1 marking invalid pixels.
    Returns a float64 (6, h, w) stack ordered contrast, dissimilarity,
    homogeneity, energy, entropy, correlation. Pixels whose window holds
    no valid pair get all six set to 0.
    """
    q = np.asarray(levels_img, dtype=np.int64)
    h, w = q.shape
    r = window // 2
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)

    tot = np.zeros((h, w), dtype=np.int64)
    s_con = np.zeros((h, w), dtype=np.int64)
    s_dis = np.zeros((h, w), dtype=np.int64)
    s_hom = np.zeros((h, w), dtype=np.float64)
    s_x = np.zeros((h, w), dtype=np.int64)
    s_xx = np.zeros((h, w), dtype=np.int64)
    s_xy = np.zeros((h, w), dtype=np.int64)

    codes = []          # per-offset int image of a*levels+b, -1 invalid anchor
    present: set[tuple[int, int]] = set()
    for dy, dx in offsets:
        a = np.full((h, w), -1, dtype=np.int64)
        b = np.full((h, w), -1, dtype=np.int64)
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        ys2 = slice(max(0, dy), h - max(0, -dy))
        xs2 = slice(max(0, dx), w - max(0, -dx))
        a[ys, xs] = q[ys, xs]
        b[ys, xs] = q[ys2, xs2]
        valid = (a >= 0) & (b >= 0)
        av = np.where(valid, a, 0)
        bv = np.where(valid, b, 0)
        code = np.where(valid, av * levels + bv, -1)
        codes.append(code)
        for c in np.unique(code[valid]):
            i, jx = divmod(int(c), levels)
            present.add((min(i, jx), max(i, jx)))

        vi = valid.astype(np.int64)
        diff = av - bv
        cnt = _box_gather(_integral(vi), r, dy, dx)
        tot += 2 * cnt
        s_con += 2 * _box_gather(_integral(vi * diff * diff), r, dy, dx)
        s_dis += 2 * _box_gather(_integral(vi * np.abs(diff)), r, dy, dx)
        s_hom += 2.0 * _box_gather(
            _integral(np.where(valid, 1.0 / (1.0 + (diff * diff)), 0.0)), r, dy, dx)
        s_x += _box_gather(_integral(vi * (av + bv)), r, dy, dx)
        s_xx += _box_gather(_integral(vi * (av * av + bv * bv)), r, dy, dx)
        s_xy += 2 * _box_gather(_integral(vi * av * bv), r, dy, dx)

    # energy/entropy need the joint histogram; stream one unordered level
    # pair at a time so memory stays O(image)
    a2 = np.zeros((h, w), dtype=np.float64)
    alog = np.zeros((h, w), dtype=np.float64)
    for i, jx in sorted(present):
        cell = np.zeros((h, w), dtype=np.int64)
        for k, (dy, dx) in enumerate(offsets):
            code = codes[k]
            cell += _box_gather(_integral((code == i * levels + jx).astype(np.int64)),
                                r, dy, dx)
            if i != jx:
                cell += _box_gather(_integral((code == jx * levels + i).astype(np.int64)),
                                    r, dy, dx)
        if i == jx:
            cell = 2 * cell          # diagonal cell tallies both directions
            mult = 1.0
        else:
            mult = 2.0               # off-diagonal cell and its transpose
        cf = cell.astype(np.float64)
        a2 += mult * cf * cf
        nz = cell > 0
        alog[nz] += mult * cf[nz] * np.log(cf[nz])

    ok = tot > 0
    totf = np.where(ok, tot, 1).astype(np.float64)
    out = np.zeros((6, h, w), dtype=np.float64)
    out[0] = np.where(ok, s_con / totf, 0.0)
    out[1] = np.where(ok, s_dis / totf, 0.0)
    out[2] = np.where(ok, s_hom / totf, 0.0)
    out[3] = np.where(ok, a2 / (totf * totf), 0.0)
    out[4] = np.where(ok, np.log(totf) - alog / totf, 0.0)
    mu = s_x / totf
    var = s_xx / totf - mu * mu
    cov = s_xy / totf - mu * mu
    corr = np.where(var > 0, cov / np.where(var > 0, var, 1.0), 1.0)
    out[5] = np.where(ok, corr, 0.0)
    return out


# ---------------------------------------------------------------------------
# CART split search and tree traversal
# ---------------------------------------------------------------------------

def best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray,
               feats: np.ndarray, min_leaf: int, n_classes: int = 4):
    """Best Gini split for the node holding rows `idx` of X.

    Maximizes sum(c_left^2)/n_left + sum(c_right^2)/n_right over midpoint
    thresholds of candidate features; ties go to the lower feature index,
    then the lower threshold. Returns (feature, threshold, found).
    """
    idx = np.asarray(idx, dtype=np.int64)
    m = idx.size
    yv = np.asarray(y)[idx]
    onehot_base = np.equal(yv[:, None], np.arange(n_classes)[None, :]).astype(np.int64)
    best_feat = -1
    best_thr = 0.0
    best_score = -np.inf
    for f in np.sort(np.asarray(feats, dtype=np.int64)):
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        boundary = np.nonzero(sv[1:] != sv[:-1])[0]
        if boundary.size == 0:
            continue
        nl = boundary + 1
        nr = m - nl
        keep = (nl >= min_leaf) & (nr >= min_leaf)
        if not np.any(keep):
            continue
        boundary = boundary[keep]
        nl = nl[keep]
        nr = nr[keep]
        prefix = np.cumsum(onehot_base[order], axis=0)
        total = prefix[-1]
        left = prefix[boundary]
        right = total[None, :] - left
        sl = np.sum(left * left, axis=1)
        sr = np.sum(right * right, axis=1)
        score = sl / nl + sr / nr
        j = int(np.argmax(score))
        if score[j] > best_score:
            best_score = float(score[j])
            best_feat = int(f)
            i = int(boundary[j])
            best_thr = 0.5 * (float(sv[i]) + float(sv[i + 1]))
    return best_feat, best_thr, best_feat >= 0


def tree_apply(feature: np.ndarray, threshold: np.ndarray, left: np.ndarray,
               right: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Route every row of X to its leaf; returns int32 node indices."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int32)
    while True:
        feat = feature[node]
        live = np.nonzero(feat >= 0)[0]
        if live.size == 0:
            return node
        cur = node[live]
        v = X[live, feat[live]]
        go_left = v <= threshold[cur]
        node[live] = np.where(go_left, left[cur], right[cur])
