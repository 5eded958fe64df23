"""Ground truth from one manual tip annotation plus a displacement track."""

import csv
import statistics
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .errors import DataError, TipOutOfImage

DEFAULT_MAX_DEVIATION_DEG = 5.0


@dataclass
class TrackLog:
    """Per-frame tip displacement in mm, stored as (d_row, d_col) = (dy, dx)."""
    displacement_mm: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.displacement_mm = np.asarray(self.displacement_mm, dtype=float).reshape(-1, 2)
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if self.timestamps.size != self.displacement_mm.shape[0]:
            raise DataError("one timestamp per displacement row required")
        if not np.all(np.isfinite(self.displacement_mm)):
            raise DataError("track contains non-finite displacements")

    def __len__(self):
        return self.displacement_mm.shape[0]

    def concat(self, other):
        return TrackLog(np.vstack([self.displacement_mm, other.displacement_mm]),
                        np.concatenate([self.timestamps, other.timestamps]))

    @classmethod
    def read_csv(cls, path):
        """Columns: frame, dx_mm, dy_mm, timestamp (x = column axis)."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                try:
                    rows.append((int(rec["frame"]), float(rec["dy_mm"]), float(rec["dx_mm"]),
                                 float(rec["timestamp"])))
                except (KeyError, ValueError) as exc:
                    raise DataError(f"bad track row {rec}: {exc}") from exc
        rows.sort()
        arr = np.array([r[1:] for r in rows], dtype=float).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2])

    def write_csv(self, path, first_frame=1):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["frame", "dx_mm", "dy_mm", "timestamp"])
            for i, ((dy, dx), ts) in enumerate(zip(self.displacement_mm, self.timestamps)):
                wr.writerow([first_frame + i, repr(float(dx)), repr(float(dy)), repr(float(ts))])


def propagate(initial_tip, track, spacing, shape=None):
    """Tips for the annotated frame and every tracked frame after it.

    ``tip[t] = tip[t-1] + displacement[t] / spacing`` per axis; returns an
    (n + 1, 2) array whose first row is the initial tip.
    """
    sp = np.asarray(spacing, dtype=float)
    if np.any(sp <= 0):
        raise ValueError("spacing must be positive")
    steps = track.displacement_mm / sp
    tips = np.vstack([np.asarray(initial_tip, dtype=float)[None, :], steps])
    tips = np.cumsum(tips, axis=0)
    if shape is not None:
        h, w = shape
        out = (tips[:, 0] < 0) | (tips[:, 0] > h - 1) | (tips[:, 1] < 0) | (tips[:, 1] > w - 1)
        if np.any(out):
            t = int(np.argmax(out))
            raise TipOutOfImage(f"tip leaves the image at frame offset {t}: {tuple(tips[t])}")
    return tips


def render_masks(tips, entry_point, width, shape):
    """Binary entry-to-tip segment of the given width for every tip."""
    if width < 1:
        raise ValueError("width must be >= 1")
    return np.stack([geometry.segment_mask(shape, entry_point, tip, width) for tip in tips])


def mask_angles(tips, entry_point):
    e = np.asarray(entry_point, dtype=float)
    return np.array([geometry.angle_of_vector(t[0] - e[0], t[1] - e[1]) for t in np.asarray(tips)])


@dataclass
class AnnotationBundle:
    initial_tip: np.ndarray
    initial_frame: int
    entry_point: np.ndarray
    masks: np.ndarray
    tips: np.ndarray
    # frames recorded before the beam was reset; dropped together with their masks
    discard_prefix: int = 0
    accepted: bool = True
    reason: Optional[str] = None

    @property
    def angles(self):
        return mask_angles(self.tips, self.entry_point)

    def kept(self):
        """(tips, masks) with the discard prefix removed."""
        return self.tips[self.discard_prefix:], self.masks[self.discard_prefix:]


def quality_check(bundle, rough_angle_deg, max_deviation_deg=DEFAULT_MAX_DEVIATION_DEG):
    """Reject when the median mask-vs-estimate angle deviation exceeds the limit."""
    if max_deviation_deg <= 0:
        raise ValueError("max deviation must be positive")
    angles = bundle.angles[bundle.discard_prefix:]
    dev = statistics.median(abs(geometry.wrap_line_angle(a - rough_angle_deg)) for a in angles)
    if dev > max_deviation_deg:
        return False, f"angular deviation {dev:.1f}° > {max_deviation_deg:.1f}°"
    return True, None


def annotate_video(initial_tip, entry_point, track, spacing, shape, width=3.0, initial_frame=0,
                   discard_prefix=0, rough_angle_deg=None, max_deviation_deg=DEFAULT_MAX_DEVIATION_DEG):
    """Propagate, render and (optionally) quality-check one video."""
    tips = propagate(initial_tip, track, spacing, shape)
    masks = render_masks(tips, entry_point, width, shape)
    bundle = AnnotationBundle(np.asarray(initial_tip, dtype=float), initial_frame,
                              np.asarray(entry_point, dtype=float), masks, tips, discard_prefix)
    if rough_angle_deg is not None:
        bundle.accepted, bundle.reason = quality_check(bundle, rough_angle_deg, max_deviation_deg)
    return bundle
