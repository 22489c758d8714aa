# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: sliding-window morphology, windowed GLCM
statistics, CART split search and decision-tree traversal.

Contracts match `xferkit._kernels.pure`; see that module for which
functions are bit-exact across lanes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, log
from libc.stdlib cimport free, malloc

cnp.import_array()

NAME = "compiled"


# ---------------------------------------------------------------------------
# grayscale morphology
# ---------------------------------------------------------------------------

cdef void _slide_min(const float* src, float* dst, Py_ssize_t n,
                     Py_ssize_t r, Py_ssize_t* deque) noexcept nogil:
    # monotonic-deque sliding minimum over [i-r, i+r] clipped to [0, n)
    cdef Py_ssize_t head = 0, tail = 0, i, j = 0, hi, lo
    for i in range(n):
        hi = i + r
        if hi > n - 1:
            hi = n - 1
        while j <= hi:
            while tail > head and src[deque[tail - 1]] >= src[j]:
                tail -= 1
            deque[tail] = j
            tail += 1
            j += 1
        lo = i - r
        while deque[head] < lo:
            head += 1
        dst[i] = src[deque[head]]


def grey_erode_square(img, int size):
    """Minimum filter with a size x size square structuring element."""
    if size % 2 != 1 or size < 1:
        raise ValueError("structuring element size must be odd and >= 1")
    cdef cnp.ndarray[cnp.float32_t, ndim=2] a = np.ascontiguousarray(img, dtype=np.float32)
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], r = size // 2
    cdef cnp.ndarray[cnp.float32_t, ndim=2] tmp = np.empty((h, w), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.empty((h, w), dtype=np.float32)
    cdef Py_ssize_t n = h if h > w else w
    cdef Py_ssize_t* deque = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    if deque == NULL:
        raise MemoryError()
    cdef float* colbuf = <float*>malloc(h * sizeof(float))
    cdef float* colout = <float*>malloc(h * sizeof(float))
    if colbuf == NULL or colout == NULL:
        free(deque); free(colbuf); free(colout)
        raise MemoryError()
    cdef Py_ssize_t y, x
    with nogil:
        for y in range(h):
            _slide_min(&a[y, 0], &tmp[y, 0], w, r, deque)
        for x in range(w):
            for y in range(h):
                colbuf[y] = tmp[y, x]
            _slide_min(colbuf, colout, h, r, deque)
            for y in range(h):
                out[y, x] = colout[y]
    free(deque); free(colbuf); free(colout)
    return out


def reconstruct_dilation(marker, mask):
    """Morphological reconstruction by dilation, 8-connectivity.

    Alternating forward/backward raster scans until stable; exact
    (max/min comparisons only).
    """
    cdef cnp.ndarray[cnp.float32_t, ndim=2] j = np.array(marker, dtype=np.float32, copy=True, order="C")
    cdef cnp.ndarray[cnp.float32_t, ndim=2] m = np.ascontiguousarray(mask, dtype=np.float32)
    if j.shape[0] != m.shape[0] or j.shape[1] != m.shape[1]:
        raise ValueError("marker and mask shapes differ")
    if np.any(np.asarray(j) > np.asarray(m)):
        raise ValueError("marker must be <= mask everywhere")
    cdef Py_ssize_t h = j.shape[0], w = j.shape[1]
    cdef Py_ssize_t y, x
    cdef float v, nb
    cdef bint changed = True
    with nogil:
        while changed:
            changed = False
            for y in range(h):
                for x in range(w):
                    v = j[y, x]
                    if x > 0 and j[y, x - 1] > v:
                        v = j[y, x - 1]
                    if y > 0:
                        nb = j[y - 1, x]
                        if nb > v:
                            v = nb
                        if x > 0 and j[y - 1, x - 1] > v:
                            v = j[y - 1, x - 1]
                        if x < w - 1 and j[y - 1, x + 1] > v:
                            v = j[y - 1, x + 1]
                    if v > m[y, x]:
                        v = m[y, x]
                    if v != j[y, x]:
                        j[y, x] = v
                        changed = True
            for y in range(h - 1, -1, -1):
                for x in range(w - 1, -1, -1):
                    v = j[y, x]
                    if x < w - 1 and j[y, x + 1] > v:
                        v = j[y, x + 1]
                    if y < h - 1:
                        nb = j[y + 1, x]
                        if nb > v:
                            v = nb
                        if x > 0 and j[y + 1, x - 1] > v:
                            v = j[y + 1, x - 1]
                        if x < w - 1 and j[y + 1, x + 1] > v:
                            v = j[y + 1, x + 1]
                    if v > m[y, x]:
                        v = m[y, x]
                    if v != j[y, x]:
                        j[y, x] = v
                        changed = True
    return j


# ---------------------------------------------------------------------------
# GLCM windowed statistics
# ---------------------------------------------------------------------------

def glcm_feature_image(levels_img, int window, int levels, offsets):
    """Per-pixel Haralick statistics from a symmetric windowed GLCM.

    Same contract as the pure lane: float64 (6, h, w), stats ordered
    contrast, dissimilarity, homogeneity, energy, entropy, correlation.
    """
    cdef cnp.ndarray[cnp.int32_t, ndim=2] q = np.ascontiguousarray(levels_img, dtype=np.int32)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] offs = np.ascontiguousarray(
        np.asarray(offsets, dtype=np.int64).reshape(-1, 2))
    cdef Py_ssize_t h = q.shape[0], w = q.shape[1]
    cdef int n_off = offs.shape[0]
    cdef Py_ssize_t r = window // 2
    cdef int ncodes = levels * levels
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((6, h, w), dtype=np.float64)

    cdef cnp.ndarray[cnp.int64_t, ndim=1] tally = np.zeros(ncodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] touched = np.zeros(ncodes, dtype=np.int32)
    # log lookup for counts; windows hold at most window^2 * n_off * 2 pairs
    cdef int lut_n = 2 * window * window * n_off + 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] loglut = np.zeros(lut_n, dtype=np.float64)
    loglut[1:] = np.log(np.arange(1, lut_n, dtype=np.float64))

    cdef Py_ssize_t cy, cx, py, px, py_lo, py_hi, px_lo, px_hi
    cdef Py_ssize_t k, t_i
    cdef long long dy, dx
    cdef int a, b, code, ntouched, i, jx, dd
    cdef long long t, tot, s_con, s_dis, s_x, s_xx, s_xy
    cdef double s_hom, a2, alog, totf, mu, var, cov

    with nogil:
        for cy in range(h):
            for cx in range(w):
                ntouched = 0
                for k in range(n_off):
                    dy = offs[k, 0]
                    dx = offs[k, 1]
                    py_lo = cy - r
                    if py_lo < 0: py_lo = 0
                    if py_lo < -dy: py_lo = -dy
                    if py_lo < cy - r - dy: py_lo = cy - r - dy
                    py_hi = cy + r
                    if py_hi > h - 1: py_hi = h - 1
                    if py_hi > h - 1 - dy: py_hi = h - 1 - dy
                    if py_hi > cy + r - dy: py_hi = cy + r - dy
                    px_lo = cx - r
                    if px_lo < 0: px_lo = 0
                    if px_lo < -dx: px_lo = -dx
                    if px_lo < cx - r - dx: px_lo = cx - r - dx
                    px_hi = cx + r
                    if px_hi > w - 1: px_hi = w - 1
                    if px_hi > w - 1 - dx: px_hi = w - 1 - dx
                    if px_hi > cx + r - dx: px_hi = cx + r - dx
                    for py in range(py_lo, py_hi + 1):
                        for px in range(px_lo, px_hi + 1):
                            a = q[py, px]
                            if a < 0:
                                continue
                            b = q[py + dy, px + dx]
                            if b < 0:
                                continue
                            code = a * levels + b
                            if tally[code] == 0:
                                touched[ntouched] = code
                                ntouched += 1
                            tally[code] += 1
                            code = b * levels + a
                            if tally[code] == 0:
                                touched[ntouched] = code
                                ntouched += 1
                            tally[code] += 1
                tot = 0; s_con = 0; s_dis = 0; s_x = 0; s_xx = 0; s_xy = 0
                s_hom = 0.0; a2 = 0.0; alog = 0.0
                for t_i in range(ntouched):
                    code = touched[t_i]
                    t = tally[code]
                    i = code / levels
                    jx = code % levels
                    dd = i - jx
                    if dd < 0:
                        dd = -dd
                    tot += t
                    s_con += t * dd * dd
                    s_dis += t * dd
                    s_hom += t / (1.0 + <double>(dd * dd))
                    s_x += t * i
                    s_xx += t * i * i
                    s_xy += t * i * jx
                    a2 += <double>t * <double>t
                    if t < lut_n:
                        alog += t * loglut[t]
                    else:
                        alog += t * log(<double>t)
                    tally[code] = 0
                if tot > 0:
                    totf = <double>tot
                    out[0, cy, cx] = s_con / totf
                    out[1, cy, cx] = s_dis / totf
                    out[2, cy, cx] = s_hom / totf
                    out[3, cy, cx] = a2 / (totf * totf)
                    out[4, cy, cx] = log(totf) - alog / totf
                    mu = s_x / totf
                    var = s_xx / totf - mu * mu
                    cov = s_xy / totf - mu * mu
                    if var > 0:
                        out[5, cy, cx] = cov / var
                    else:
                        out[5, cy, cx] = 1.0
    return out


# ---------------------------------------------------------------------------
# CART split search and tree traversal
# ---------------------------------------------------------------------------

cdef void _sort_pairs(float* v, unsigned char* l, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    # quicksort on v with co-moving labels; insertion sort below 16
    cdef Py_ssize_t i, j, mid
    cdef float pivot, tv
    cdef unsigned char tl
    while hi - lo > 15:
        mid = lo + (hi - lo) // 2
        # median of three to v[mid]
        if v[lo] > v[mid]:
            tv = v[lo]; v[lo] = v[mid]; v[mid] = tv
            tl = l[lo]; l[lo] = l[mid]; l[mid] = tl
        if v[mid] > v[hi]:
            tv = v[mid]; v[mid] = v[hi]; v[hi] = tv
            tl = l[mid]; l[mid] = l[hi]; l[hi] = tl
            if v[lo] > v[mid]:
                tv = v[lo]; v[lo] = v[mid]; v[mid] = tv
                tl = l[lo]; l[lo] = l[mid]; l[mid] = tl
        pivot = v[mid]
        i = lo
        j = hi
        while i <= j:
            while v[i] < pivot:
                i += 1
            while v[j] > pivot:
                j -= 1
            if i <= j:
                tv = v[i]; v[i] = v[j]; v[j] = tv
                tl = l[i]; l[i] = l[j]; l[j] = tl
                i += 1
                j -= 1
        if j - lo < hi - i:
            _sort_pairs(v, l, lo, j)
            lo = i
        else:
            _sort_pairs(v, l, i, hi)
            hi = j
    for i in range(lo + 1, hi + 1):
        tv = v[i]
        tl = l[i]
        j = i - 1
        while j >= lo and v[j] > tv:
            v[j + 1] = v[j]
            l[j + 1] = l[j]
            j -= 1
        v[j + 1] = tv
        l[j + 1] = tl


def best_split(X, y, idx, feats, int min_leaf, int n_classes=4):
    """Best Gini split for one node; see the pure lane for the contract."""
    cdef cnp.ndarray[cnp.float32_t, ndim=2] Xa = np.ascontiguousarray(X, dtype=np.float32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ia = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fa = np.sort(np.asarray(feats, dtype=np.int64))
    cdef Py_ssize_t m = ia.shape[0], nf = fa.shape[0]
    cdef float* vals = <float*>malloc(m * sizeof(float))
    cdef unsigned char* labs = <unsigned char*>malloc(m)
    if vals == NULL or labs == NULL:
        free(vals); free(labs)
        raise MemoryError()
    cdef long long counts[16]
    cdef long long totals[16]
    cdef Py_ssize_t fi, i, c
    cdef long long f, nl, nr, sl, sr
    cdef double score, best_score = -INFINITY
    cdef long long best_feat = -1
    cdef double best_thr = 0.0
    cdef unsigned char lab
    with nogil:
        for fi in range(nf):
            f = fa[fi]
            for c in range(n_classes):
                totals[c] = 0
            for i in range(m):
                vals[i] = Xa[ia[i], f]
                lab = ya[ia[i]]
                labs[i] = lab
                totals[lab] += 1
            _sort_pairs(vals, labs, 0, m - 1)
            for c in range(n_classes):
                counts[c] = 0
            for i in range(m - 1):
                counts[labs[i]] += 1
                if vals[i] == vals[i + 1]:
                    continue
                nl = i + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sl = 0
                sr = 0
                for c in range(n_classes):
                    sl += counts[c] * counts[c]
                    sr += (totals[c] - counts[c]) * (totals[c] - counts[c])
                score = sl / <double>nl + sr / <double>nr
                if score > best_score:
                    best_score = score
                    best_feat = f
                    best_thr = 0.5 * (<double>vals[i] + <double>vals[i + 1])
    free(vals)
    free(labs)
    return int(best_feat), float(best_thr), best_feat >= 0


def tree_apply(feature, threshold, left, right, X):
    """Route every row of X to its leaf; returns int32 node indices."""
    cdef cnp.ndarray[cnp.int32_t, ndim=1] fe = np.ascontiguousarray(feature, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] th = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] le = np.ascontiguousarray(left, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ri = np.ascontiguousarray(right, dtype=np.int32)
    cdef cnp.ndarray[cnp.float32_t, ndim=2] Xa = np.ascontiguousarray(X, dtype=np.float32)
    cdef Py_ssize_t n = Xa.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] out = np.zeros(n, dtype=np.int32)
    cdef Py_ssize_t i
    cdef int node, f
    with nogil:
        for i in range(n):
            node = 0
            f = fe[node]
            while f >= 0:
                if <double>Xa[i, f] <= th[node]:
                    node = le[node]
                else:
                    node = ri[node]
                f = fe[node]
            out[i] = node
    return out
