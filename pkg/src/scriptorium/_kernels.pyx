# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: IoU matrices, greedy box assignment, cosine distances.

Mirrors the numpy fallback in ``_kernels_py.py``; keep the two in sync.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def iou_matrix(a_in, b_in):
    """Pairwise IoU of two (x, y, w, h) box sets, (len(a), len(b)) float64."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(a_in, dtype=np.float64).reshape(-1, 4) if np.asarray(a_in).size else np.zeros((0, 4))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(b_in, dtype=np.float64).reshape(-1, 4) if np.asarray(b_in).size else np.zeros((0, 4))
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, area_a, area_b
    cdef double iw, ih, inter, union
    for i in range(n):
        ax1 = a[i, 0]
        ay1 = a[i, 1]
        ax2 = a[i, 0] + a[i, 2]
        ay2 = a[i, 1] + a[i, 3]
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            iw = min(ax2, b[j, 0] + b[j, 2]) - max(ax1, b[j, 0])
            if iw <= 0.0:
                continue
            ih = min(ay2, b[j, 1] + b[j, 3]) - max(ay1, b[j, 1])
            if ih <= 0.0:
                continue
            area_b = b[j, 2] * b[j, 3]
            # clamp: x+w round-trips can overstate the overlap by an ulp
            inter = min(iw * ih, area_a, area_b)
            union = area_a + area_b - inter
            out[i, j] = inter / union
    return out


def greedy_match(det_boxes, gt_boxes, double iou_thr):
    """Greedy one-to-one matching; detections must be pre-ordered.

    Returns matched gt index per detection (-1 when unmatched); ties on IoU
    resolve to the lowest gt index.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ious
    cdef Py_ssize_t n_det = np.asarray(det_boxes).shape[0] if np.asarray(det_boxes).size else 0
    cdef Py_ssize_t n_gt = np.asarray(gt_boxes).shape[0] if np.asarray(gt_boxes).size else 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.full(n_det, -1, dtype=np.int64)
    if n_det == 0 or n_gt == 0:
        return out
    ious = iou_matrix(det_boxes, gt_boxes)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(n_gt, dtype=np.uint8)
    cdef Py_ssize_t i, j, best
    cdef double best_iou
    for i in range(n_det):
        best = -1
        best_iou = 0.0
        for j in range(n_gt):
            if used[j] == 0 and ious[i, j] > best_iou:
                best = j
                best_iou = ious[i, j]
        if best >= 0 and best_iou >= iou_thr:
            out[i] = best
            used[best] = 1
    return out


def pairwise_cosine(x_in):
    """Dense cosine-distance matrix with zero diagonal, clipped to [0, 2]."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] norms = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, n), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc, v
    for i in range(n):
        acc = 0.0
        for k in range(d):
            acc += x[i, k] * x[i, k]
        norms[i] = acc ** 0.5
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += x[j, k] * x[i, k]
            v = 1.0 - acc / (norms[j] * norms[i])
            if v < 0.0:
                v = 0.0
            elif v > 2.0:
                v = 2.0
            out[i, j] = v
        out[i, i] = 0.0
    return out
