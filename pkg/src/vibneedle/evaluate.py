"""Tip error, angle error and success-rate reporting."""

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .errors import EmptyRecordSet

TIP_THRESHOLD_MM = 10.0
ANGLE_THRESHOLD_DEG = 15.0


def tip_error(pred_tip, gt_tip, spacing):
    """Euclidean tip distance in mm with per-axis (row, col) spacing."""
    sr, sc = spacing
    if sr <= 0 or sc <= 0:
        raise ValueError("spacing must be positive")
    d = np.asarray(getattr(pred_tip, "tip_px", pred_tip), dtype=float) - np.asarray(gt_tip, dtype=float)
    return float(math.hypot(d[0] * sr, d[1] * sc))


def angle_error(pred_deg, gt_deg):
    return abs(geometry.wrap_line_angle(pred_deg - gt_deg))


def is_success(tip_err, angle_err, tip_threshold=TIP_THRESHOLD_MM, angle_threshold=ANGLE_THRESHOLD_DEG):
    if tip_err is None or angle_err is None:
        return False
    return tip_err < tip_threshold and angle_err < angle_threshold


@dataclass
class EvalRecord:
    frame_id: object
    tip_error: Optional[float]
    angle_error: Optional[float]
    success: bool

    @property
    def detected(self):
        return self.tip_error is not None


def make_record(frame_id, detection, gt_tip, gt_angle, spacing,
                tip_threshold=TIP_THRESHOLD_MM, angle_threshold=ANGLE_THRESHOLD_DEG):
    """Record for one frame; a missing detection is a failure with no errors."""
    if detection is None:
        return EvalRecord(frame_id, None, None, False)
    te = tip_error(detection.tip_px, gt_tip, spacing)
    ae = angle_error(detection.angle_deg, gt_angle)
    return EvalRecord(frame_id, te, ae, is_success(te, ae, tip_threshold, angle_threshold))


@dataclass
class EvalSummary:
    tip_mean: float
    tip_std: float
    angle_mean: float
    angle_std: float
    success_rate: float
    count: int
    detected: int

    def as_row(self, label=""):
        return [label, f"{self.tip_mean:.2f} ± {self.tip_std:.2f}",
                f"{self.angle_mean:.2f} ± {self.angle_std:.2f}", f"{self.success_rate:.1f}"]


class _Moments:
    """Count / mean / M2 accumulator (Chan et al. pairwise merge)."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def merge(self, other):
        n = self.n + other.n
        if n == 0:
            return
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self.m2 += other.m2 + d * d * self.n * other.n / n
        self.n = n

    @property
    def std(self):
        return math.sqrt(self.m2 / self.n) if self.n else math.nan


class PartialSummary:
    """Mergeable running aggregate; ``finalize`` gives an EvalSummary."""

    def __init__(self):
        self.total = 0
        self.successes = 0
        self.tip = _Moments()
        self.angle = _Moments()

    def add(self, rec):
        self.total += 1
        self.successes += bool(rec.success)
        if rec.detected:
            self.tip.add(rec.tip_error)
            self.angle.add(rec.angle_error)
        return self

    def merge(self, other):
        self.total += other.total
        self.successes += other.successes
        self.tip.merge(other.tip)
        self.angle.merge(other.angle)
        return self

    def finalize(self):
        if self.total == 0:
            raise EmptyRecordSet("no records to summarize")
        nan = math.nan
        return EvalSummary(
            self.tip.mean if self.tip.n else nan, self.tip.std,
            self.angle.mean if self.angle.n else nan, self.angle.std,
            100.0 * self.successes / self.total, self.total, self.tip.n)


def summarize(records):
    """Population mean/std over detected frames; success over all frames."""
    part = PartialSummary()
    for r in records:
        part.add(r)
    return part.finalize()


SUMMARY_FIELDS = ("label", "tip_mean_mm", "tip_std_mm", "angle_mean_deg", "angle_std_deg",
                  "success_rate_pct", "count", "detected")


def summary_csv(rows):
    """CSV text for [(label, EvalSummary), ...]."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SUMMARY_FIELDS)
    for label, s in rows:
        wr.writerow([label, f"{s.tip_mean:.6g}", f"{s.tip_std:.6g}", f"{s.angle_mean:.6g}",
                     f"{s.angle_std:.6g}", f"{s.success_rate:.6g}", s.count, s.detected])
    return buf.getvalue()


def summary_table(rows, label_header="Methods"):
    """Plain-text table with Tip Err. / Angle Err. / Suc. Rate columns."""
    header = [label_header, "Tip Err. (mm)", "Angle Err. (°)", "Suc. Rate (%)"]
    body = [s.as_row(label) for label, s in rows]
    widths = [max(len(str(r[i])) for r in [header] + body) for i in range(4)]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    rule = "-" * len(line(header))
    return "\n".join([rule, line(header), rule] + [line(r) for r in body] + [rule])
