"""Synthetic B-mode sequences of a vibrating needle during insertion.

The background is a static tissue echogenicity map (low-pass filtered
Gaussian noise) multiplied by a Rayleigh speckle field.  The needle carries
its own speckle texture, attached to the needle body, which moves with both
the axial insertion and the lateral vibration.  Texture and background are
blended as complex speckle fields with variance-preserving weights, so at
zero contrast a single frame has the same first-order statistics inside and
outside the needle; only the temporal modulation gives it away.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import geometry
from .errors import InvalidProfile, NyquistViolation

DEFAULT_SHAPE = (256, 256)
DEPTH_CM = 4.5
FOOTPRINT_MM = 51.3

_RAYLEIGH_MEAN = math.sqrt(math.pi) / 2.0


def default_spacing(depth_cm=DEPTH_CM, height_px=256, footprint_mm=FOOTPRINT_MM, width_px=256):
    """Pixel spacing (row, col) in mm/px for a linear probe image."""
    if min(depth_cm, height_px, footprint_mm, width_px) <= 0:
        raise ValueError("all spacing inputs must be positive")
    return (10.0 * depth_cm / height_px, footprint_mm / width_px)


@dataclass
class Frame:
    pixels: np.ndarray
    timestamp: float
    pixel_spacing: tuple

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class GroundTruth:
    tip: np.ndarray          # (row, col) px, nominal (un-vibrated) shaft
    angle_deg: float
    mask: np.ndarray         # bool (H, W)


@dataclass
class VibrationSpec:
    f_vib: float = 2.5
    amplitude: float = 1.0
    phase: float = 0.0
    # None means perpendicular to the shaft
    direction: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("vibration amplitude must be >= 0")
        if self.f_vib <= 0:
            raise ValueError("f_vib must be positive")


@dataclass
class InsertionProfile:
    entry_point: Sequence[float] = (8.0, 16.0)
    shaft_angle_deg: float = 30.0
    # scalar or one value per frame; depth[t + 1] = depth[t] + velocity[t]
    velocity: object = 0.0
    initial_depth: float = 40.0
    needle_contrast: float = 0.3
    needle_width: float = 3.0
    # axial intervals (px from the entry point) where the needle is not rendered
    occlusions: Sequence[tuple] = ()

    def __post_init__(self):
        if not 0.0 < self.shaft_angle_deg < 90.0:
            raise InvalidProfile(f"shaft angle {self.shaft_angle_deg} outside (0, 90)")
        if not 0.0 <= self.needle_contrast <= 1.0:
            raise InvalidProfile("needle_contrast must lie in [0, 1]")
        if self.needle_width <= 0:
            raise InvalidProfile("needle_width must be positive")

    def depths(self, n_frames):
        v = np.broadcast_to(np.asarray(self.velocity, dtype=float), (n_frames,))
        depth = self.initial_depth + np.concatenate([[0.0], np.cumsum(v[:-1])])
        return depth


@dataclass
class TissueModel:
    """Parameters of the background and speckle texture."""
    echo_mean: float = 0.35
    echo_std: float = 0.06
    echo_sigma: float = 16.0
    speckle_sigma: float = 1.0
    n_modes: int = 96


def advance_retract_velocity(n_frames, speed=0.6, advance=40, retract=15, retract_speed=None):
    """Velocity schedule that repeatedly advances and partially retracts."""
    retract_speed = speed if retract_speed is None else retract_speed
    v = np.empty(n_frames)
    period = advance + retract
    for t in range(n_frames):
        v[t] = speed if (t % period) < advance else -retract_speed
    return v


def _echogenicity(rng, shape, tissue):
    z = gaussian_filter(rng.standard_normal(shape), tissue.echo_sigma, mode="reflect")
    z /= z.std() + 1e-12
    return np.clip(tissue.echo_mean + tissue.echo_std * z, 0.05, 0.95)


def _background_speckle(rng, shape, tissue):
    re = gaussian_filter(rng.standard_normal(shape), tissue.speckle_sigma, mode="wrap")
    im = gaussian_filter(rng.standard_normal(shape), tissue.speckle_sigma, mode="wrap")
    z = re + 1j * im
    # unit mean power, circular complex Gaussian
    return z / np.sqrt(np.mean(np.abs(z) ** 2))


class _ModeField:
    """Circular complex Gaussian random field evaluated at arbitrary points.

    A sum of random plane waves with complex Gaussian weights: the value at
    any fixed point is exactly CN(0, 1), and the wavenumber spread matches
    the spatial correlation of the gridded background speckle.
    """

    def __init__(self, rng, n_modes, sigma):
        k_std = 1.0 / (math.sqrt(2.0) * sigma)
        self.k = rng.standard_normal((n_modes, 2)) * k_std
        self.c = (rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)) / math.sqrt(2.0 * n_modes)

    def __call__(self, b, l):
        phase = np.outer(b, self.k[:, 0]) + np.outer(l, self.k[:, 1])
        return np.exp(1j * phase) @ self.c


def vibration_offset(vib, t, fs):
    """Signed displacement (px) along the vibration direction at frame index ``t``."""
    t = np.asarray(t, dtype=float)
    return vib.amplitude * np.sin(2.0 * np.pi * vib.f_vib * t / fs + vib.phase)


def generate_sequence(profile, vib, noise_seed, n_frames, fs=30.0, *, shape=DEFAULT_SHAPE,
                      noise_mode="live", jitter_std=0.01, spacing=None, tissue=None,
                      min_frames=30):
    """Render ``n_frames`` frames and their ground truth.

    Frame ``t`` shows the needle displaced by
    ``amplitude * sin(2 pi f_vib t / fs + phase)`` along the vibration
    direction; the ground truth is the nominal, un-vibrated shaft.
    """
    if fs <= 2.0 * vib.f_vib:
        raise NyquistViolation(f"fs={fs} Hz must exceed 2*f_vib={2 * vib.f_vib} Hz")
    if n_frames < min_frames:
        raise ValueError(f"n_frames={n_frames} shorter than the {min_frames}-frame window")
    if noise_mode not in ("live", "frozen"):
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    h, w = shape
    if h < 32 or w < 32:
        raise ValueError("frames must be at least 32x32")
    tissue = tissue or TissueModel()
    spacing = tuple(spacing) if spacing is not None else default_spacing(DEPTH_CM, h, FOOTPRINT_MM, w)

    entry = np.asarray(profile.entry_point, dtype=float)
    theta = profile.shaft_angle_deg
    u = geometry.direction_from_angle(theta)
    n = geometry.normal_from_angle(theta)
    depths = profile.depths(n_frames)
    if np.any(depths <= 0):
        raise InvalidProfile("tip depth must stay positive")
    tips = entry[None, :] + depths[:, None] * u[None, :]
    inside = lambda p: (0 <= p[..., 0]) & (p[..., 0] <= h - 1) & (0 <= p[..., 1]) & (p[..., 1] <= w - 1)
    if not inside(entry):
        raise InvalidProfile(f"entry point {tuple(entry)} outside the image")
    if not np.all(inside(tips)):
        bad = int(np.argmin(inside(tips)))
        raise InvalidProfile(f"tip leaves the image at frame {bad}: {tuple(tips[bad])}")

    vdir = n if vib.direction is None else np.asarray(vib.direction, dtype=float)
    if abs(np.hypot(*vdir) - 1.0) > 1e-9:
        raise ValueError("vibration direction must be a unit vector")

    rng = np.random.default_rng(noise_seed)
    echo = _echogenicity(rng, shape, tissue)
    z_bg = _background_speckle(rng, shape, tissue)
    needle_field = _ModeField(rng, tissue.n_modes, tissue.speckle_sigma)
    jitter_rng = np.random.default_rng([noise_seed, 1])

    base = echo * np.abs(z_bg) / _RAYLEIGH_MEAN
    half = 0.5 * profile.needle_width
    reach = half + vib.amplitude + 2.0
    rr, cc = np.mgrid[0:h, 0:w]
    rel_r = rr - entry[0]
    rel_c = cc - entry[1]
    axial0 = rel_r * u[0] + rel_c * u[1]
    lateral0 = rel_r * n[0] + rel_c * n[1]
    # candidate pixels for any frame; keeps per-frame work on a thin band
    band = (np.abs(lateral0) <= reach) & (axial0 >= -reach) & (axial0 <= depths.max() + reach)
    bidx = np.nonzero(band.ravel())[0]
    b_ax = axial0.ravel()[bidx]
    b_lat = lateral0.ravel()[bidx]
    b_echo = echo.ravel()[bidx]
    b_zbg = z_bg.ravel()[bidx]

    frames, truths = [], []
    for t in range(n_frames):
        disp = float(vibration_offset(vib, t, fs)) * vdir
        a = b_ax - float(disp @ u)
        lat = b_lat - float(disp @ n)
        d = depths[t]
        c_lat = np.clip(half + 0.5 - np.abs(lat), 0.0, 1.0)
        c_ax = np.clip(a + 0.5, 0.0, 1.0) * np.clip(d - a + 0.5, 0.0, 1.0)
        alpha = c_lat * c_ax
        for a0, a1 in profile.occlusions:
            alpha[(a >= a0) & (a <= a1)] = 0.0
        img = base.copy()
        on = alpha > 0
        if np.any(on):
            al = alpha[on]
            # needle texture lives in body coordinates: distance back from the tip
            z_n = needle_field(d - a[on], lat[on])
            z = ((1.0 - al) * b_zbg[on] + al * z_n) / np.sqrt((1.0 - al) ** 2 + al ** 2)
            vals = b_echo[on] * np.abs(z) / _RAYLEIGH_MEAN + al * profile.needle_contrast
            img.ravel()[bidx[on]] = vals
        if noise_mode == "live" and jitter_std > 0:
            img = img + jitter_rng.normal(0.0, jitter_std, size=shape)
        np.clip(img, 0.0, 1.0, out=img)
        frames.append(Frame(img, t / fs, spacing))
        mask = geometry.segment_mask(shape, entry, tips[t], profile.needle_width)
        truths.append(GroundTruth(tips[t].copy(), float(theta), mask))
    return frames, truths


def stack_frames(frames):
    """(T, H, W) float array from a list of Frame."""
    return np.stack([f.pixels for f in frames])
