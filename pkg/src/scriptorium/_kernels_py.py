"""Pure numpy implementations of the hot kernels.

Selected by :mod:`scriptorium.kernels` when the compiled extension is not
available (or is disabled via ``SCRIPTORIUM_PURE_PYTHON=1``). The formulas
mirror ``_kernels.pyx`` operation for operation so both backends agree to
floating-point noise.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two box sets in (x, y, w, h) layout.

    Returns an (len(a), len(b)) float64 matrix; disjoint pairs score 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ax1, ay1 = a[:, 0], a[:, 1]
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]

    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    iw = np.maximum(iw, 0.0)
    ih = np.maximum(ih, 0.0)
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    # clamp: x+w round-trips can overstate the overlap by an ulp
    inter = np.minimum(np.minimum(iw * ih, area_a), area_b)
    union = area_a + area_b - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inter > 0.0, inter / union, 0.0)
    return out


def greedy_match(det_boxes: np.ndarray, gt_boxes: np.ndarray, iou_thr: float) -> np.ndarray:
    """Greedy one-to-one assignment of detections to ground-truth boxes.

    ``det_boxes`` must already be in processing order (score descending).
    Each detection takes the unused ground truth with the highest IoU,
    provided IoU >= ``iou_thr``; ties go to the lowest ground-truth index.
    Returns an int64 array of matched gt indices, -1 for unmatched.
    """
    n_det = det_boxes.shape[0] if det_boxes.size else 0
    n_gt = gt_boxes.shape[0] if gt_boxes.size else 0
    out = np.full(n_det, -1, dtype=np.int64)
    if n_det == 0 or n_gt == 0:
        return out
    ious = iou_matrix(det_boxes, gt_boxes)
    used = np.zeros(n_gt, dtype=bool)
    for i in range(n_det):
        row = ious[i]
        best = -1
        best_iou = 0.0
        for j in range(n_gt):
            if not used[j] and row[j] > best_iou:
                best = j
                best_iou = row[j]
        if best >= 0 and best_iou >= iou_thr:
            out[i] = best
            used[best] = True
    return out


def pairwise_cosine(x: np.ndarray) -> np.ndarray:
    """Dense cosine-distance matrix (1 - cos similarity) with zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=1))
    n = x.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        dots = x @ x[i]
        out[i] = 1.0 - dots / (norms * norms[i])
    np.fill_diagonal(out, 0.0)
    return np.clip(out, 0.0, 2.0)
