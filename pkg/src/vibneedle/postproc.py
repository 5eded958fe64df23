"""Mask -> RANSAC line -> tip projection."""

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateInput, EmptyMask, InsufficientPoints

# keeps the (hypotheses x points) distance block around 16 MB
_BLOCK_ELEMS = 2_000_000


@dataclass
class LineFit:
    angle_deg: float
    anchor: np.ndarray       # (row, col) on the line
    direction: np.ndarray    # unit (d_row, d_col)
    inlier_count: int
    inlier_ratio: float


@dataclass
class Detection:
    tip_px: np.ndarray       # (row, col)
    tip_mm: np.ndarray       # (row * spacing_row, col * spacing_col)
    angle_deg: float
    confidence: float

    def record(self, frame_index):
        """Structured text line: frame, tip row/col px, tip x/y mm, angle, inlier ratio."""
        return format_detection(frame_index, self)


def binarize(prob, threshold=0.5):
    """Mask of ``prob >= threshold`` and the positive (row, col) list, row-major."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} must lie in (0, 1)")
    mask = np.asarray(prob) >= threshold
    return mask, np.argwhere(mask)


def _tls(points):
    centroid = points.mean(axis=0)
    q = points - centroid
    cov = q.T @ q
    evals, evecs = np.linalg.eigh(cov)
    d = evecs[:, np.argmax(evals)]
    return centroid, d / np.hypot(d[0], d[1])


def ransac_line(points, inlier_tol=2.0, iterations=500, seed=0):
    """Robust line through 2-D points.

    Hypotheses are point pairs drawn with a seeded generator from the
    row-major sorted point list, scored by inlier count (ties broken by
    smaller mean squared inlier residual); the winner's inliers get a total-least-squares
    refit.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise InsufficientPoints(f"need at least 2 points, got {pts.shape[0]}")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if np.all(pts == pts[0]):
        raise DegenerateInput("all points coincide")
    n = pts.shape[0]
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=iterations)
    j = rng.integers(0, n - 1, size=iterations)
    j = j + (j >= i)
    d = pts[j] - pts[i]
    norm = np.hypot(d[:, 0], d[:, 1])
    ok = norm > 0
    if not np.any(ok):
        # every draw hit duplicate points; fall back to the two extreme points
        i = np.array([0])
        d = (pts[-1] - pts[0])[None, :]
        norm = np.hypot(d[:, 0], d[:, 1])
        ok = np.array([True])
    i, d, norm = i[ok], d[ok], norm[ok]
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / norm[:, None]
    offsets = np.einsum("hk,hk->h", normals, pts[i])

    best_count, best_mse, best_h = -1, math.inf, 0
    block = max(1, _BLOCK_ELEMS // n)
    for s in range(0, normals.shape[0], block):
        dist = np.abs(normals[s:s + block] @ pts.T - offsets[s:s + block, None])
        inl = dist <= inlier_tol
        counts = inl.sum(axis=1)
        sse = np.where(inl, dist * dist, 0.0).sum(axis=1)
        mse = sse / np.maximum(counts, 1)
        # lexicographic: max count, then min residual, then earliest hypothesis
        order = np.lexsort((np.arange(counts.size), mse, -counts))
        h = order[0]
        if counts[h] > best_count or (counts[h] == best_count and mse[h] < best_mse):
            best_count, best_mse, best_h = int(counts[h]), float(mse[h]), s + int(h)

    dist = np.abs(pts @ normals[best_h] - offsets[best_h])
    inliers = pts[dist <= inlier_tol]
    if inliers.shape[0] >= 2 and not np.all(inliers == inliers[0]):
        anchor, direction = _tls(inliers)
    else:
        anchor, direction = pts[i[best_h]], d[best_h] / norm[best_h]
    if direction[0] < 0 or (direction[0] == 0 and direction[1] < 0):
        direction = -direction
    angle = geometry.angle_of_vector(direction[0], direction[1])
    return LineFit(float(angle), anchor, direction, best_count, best_count / n)


def _line_span_in_image(fit, shape):
    """Parameter interval [s_lo, s_hi] of the line inside the image box."""
    h, w = shape
    lo, hi = -math.inf, math.inf
    for axis, extent in ((0, h - 1), (1, w - 1)):
        a = fit.anchor[axis]
        d = fit.direction[axis]
        if abs(d) < 1e-12:
            continue
        t0, t1 = (0.0 - a) / d, (extent - a) / d
        lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
    return lo, hi


def insertion_sign(positives, fit, shape):
    """+1 if the needle runs along +direction from its entry, else -1.

    The entry side is the end of the positive run that sits closer to the
    image border where the line leaves the frame.
    """
    s = (positives - fit.anchor) @ fit.direction
    s_lo, s_hi = _line_span_in_image(fit, shape)
    gap_lo = s.min() - s_lo
    gap_hi = s_hi - s.max()
    return 1.0 if gap_lo <= gap_hi else -1.0


def project_onto_line(point, fit):
    q = np.asarray(point, dtype=float) - fit.anchor
    return fit.anchor + (q @ fit.direction) * fit.direction


def extract_tip(mask, fit, spacing):
    """Project the bottom-most positive onto the fitted line."""
    positives = np.argwhere(np.asarray(mask, dtype=bool))
    if positives.shape[0] == 0:
        raise EmptyMask("mask has no positive pixel")
    bottom = positives[positives[:, 0] == positives[:, 0].max()].astype(float)
    if bottom.shape[0] > 1:
        sign = insertion_sign(positives.astype(float), fit, np.shape(mask))
        s = (bottom - fit.anchor) @ fit.direction * sign
        chosen = bottom[int(np.argmax(s))]
    else:
        chosen = bottom[0]
    tip = project_onto_line(chosen, fit)
    mm = tip * np.asarray(spacing, dtype=float)
    return Detection(tip, mm, fit.angle_deg, fit.inlier_ratio)


def perpendicular_residual(point, fit):
    q = np.asarray(point, dtype=float) - fit.anchor
    return abs(q[0] * fit.direction[1] - q[1] * fit.direction[0])


def detect_from_mask(mask, spacing, inlier_tol=2.0, iterations=500, seed=0):
    """Full post-processing on a binary mask; None when nothing is detectable."""
    positives = np.argwhere(mask)
    try:
        fit = ransac_line(positives, inlier_tol, iterations, seed)
    except (InsufficientPoints, DegenerateInput):
        return None
    return extract_tip(mask, fit, spacing)


def detect_needle(prob, spacing, threshold=0.5, inlier_tol=2.0, iterations=500, seed=0):
    mask, _ = binarize(prob, threshold)
    return detect_from_mask(mask, spacing, inlier_tol, iterations, seed)


DETECTION_FIELDS = ("frame", "tip_row_px", "tip_col_px", "tip_x_mm", "tip_y_mm",
                    "angle_deg", "inlier_ratio")


def format_detection(frame_index, det):
    """One CSV line; no-detection frames carry ``nan`` fields."""
    if det is None:
        vals = ["nan"] * 6
    else:
        vals = [repr(float(det.tip_px[0])), repr(float(det.tip_px[1])),
                repr(float(det.tip_mm[1])), repr(float(det.tip_mm[0])),
                repr(float(det.angle_deg)), repr(float(det.confidence))]
    return ",".join([str(int(frame_index))] + vals)


def parse_detection(line, spacing=None):
    """Inverse of format_detection: (frame, Detection or None)."""
    parts = line.strip().split(",")
    frame = int(parts[0])
    vals = [float(v) for v in parts[1:7]]
    if any(math.isnan(v) for v in vals):
        return frame, None
    row, col, x_mm, y_mm, angle, ratio = vals
    return frame, Detection(np.array([row, col]), np.array([y_mm, x_mm]), angle, ratio)
