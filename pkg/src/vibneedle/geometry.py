"""Shared 2-D conventions.

Points are ``(row, col)`` pairs in pixels, rows growing downward.  A shaft
angle ``theta`` is measured from the image horizontal and is positive when
the needle descends left-to-right, so the unit shaft direction is
``(sin theta, cos theta)``.  Line angles are 180-degree periodic and are
reported in ``(-90, 90]``.
"""

import math

import numpy as np

from .errors import DegenerateSegment


def wrap_line_angle(deg):
    """Wrap an angle (scalar or array) into (-90, 90]."""
    wrapped = -np.mod(-(np.asarray(deg, dtype=float) + 90.0), 180.0) + 90.0
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def direction_from_angle(theta_deg):
    t = math.radians(theta_deg)
    return np.array([math.sin(t), math.cos(t)])


def normal_from_angle(theta_deg):
    t = math.radians(theta_deg)
    return np.array([math.cos(t), -math.sin(t)])


def angle_of_vector(d_row, d_col):
    return wrap_line_angle(math.degrees(math.atan2(d_row, d_col)))


def segment_mask(shape, start, end, width):
    """Binary mask of pixel centres within ``width / 2`` of segment start-end.

    A pixel is positive when its axial coordinate lies in [0, |end - start|]
    and its perpendicular distance to the segment axis is at most width / 2.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    d = end - start
    length = float(np.hypot(d[0], d[1]))
    if length == 0.0:
        raise DegenerateSegment(f"segment endpoints coincide at {tuple(start)}")
    u = d / length
    n = np.array([u[1], -u[0]])
    half = 0.5 * width
    h, w = shape
    # bounding box with margin keeps large frames cheap
    r0 = max(int(math.floor(min(start[0], end[0]) - half - 1)), 0)
    r1 = min(int(math.ceil(max(start[0], end[0]) + half + 1)) + 1, h)
    c0 = max(int(math.floor(min(start[1], end[1]) - half - 1)), 0)
    c1 = min(int(math.ceil(max(start[1], end[1]) + half + 1)) + 1, w)
    mask = np.zeros(shape, dtype=bool)
    if r0 >= r1 or c0 >= c1:
        return mask
    rr, cc = np.mgrid[r0:r1, c0:c1]
    qr = rr - start[0]
    qc = cc - start[1]
    axial = qr * u[0] + qc * u[1]
    lateral = qr * n[0] + qc * n[1]
    mask[r0:r1, c0:c1] = (axial >= 0.0) & (axial <= length) & (np.abs(lateral) <= half)
    return mask
