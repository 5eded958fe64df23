"""Per-pixel temporal frequency features over a trailing frame window."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (BinOutOfRange, InvalidWindowing, Uninitialized,
                     WindowLengthMismatch)

WINDOWS = ("rectangular", "hann")


@dataclass(frozen=True)
class SpectralConfig:
    L: int = 30
    fs: float = 30.0
    band: tuple = (2.0, 3.0)
    window: str = "rectangular"
    dc_removal: bool = True

    def __post_init__(self):
        if self.L < 8:
            raise ValueError(f"window length L={self.L} must be >= 8")
        lo, hi = self.band
        if not (0.0 < lo <= hi <= self.fs / 2.0):
            raise ValueError(f"band {self.band} must lie within (0, fs/2]")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def bins(self):
        """DFT bins whose centre frequency lies in the band, as (k, Hz)."""
        lo, hi = self.band
        res = self.fs / self.L
        out = []
        for k in range(self.L // 2 + 1):
            f = k * res
            # tolerance guards band edges that land exactly on a bin centre
            if lo - 1e-9 <= f <= hi + 1e-9:
                out.append((k, f))
        if not out:
            raise ValueError(f"band {self.band} contains no DFT bin at L={self.L}, fs={self.fs}")
        return out


@dataclass
class SpectralFeatureMap:
    magnitudes: np.ndarray   # (H, W, B), nonnegative
    bins: list               # [(k, Hz), ...]
    L: int

    @property
    def energy(self):
        """Summed band magnitude per pixel, (H, W)."""
        return self.magnitudes.sum(axis=-1)

    @property
    def n_bands(self):
        return self.magnitudes.shape[-1]


def window_weights(name, n):
    if name == "rectangular":
        return np.ones(n)
    if name == "hann":
        # periodic Hann, the usual choice for spectral analysis
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    raise ValueError(f"unknown window {name!r}")


def _prepare(x, window, dc_removal):
    x = np.asarray(x, dtype=float)
    if dc_removal:
        x = x - x.mean(axis=0)
    if window != "rectangular":
        w = window_weights(window, x.shape[0])
        x = x * w.reshape((-1,) + (1,) * (x.ndim - 1))
    return x


def goertzel(x, k):
    """|X_k| of ``x`` along axis 0 via the Goertzel recurrence.

    Works on any trailing shape, so a (L, H, W) stack yields an (H, W) map.
    """
    n = x.shape[0]
    omega = 2.0 * math.pi * k / n
    coeff = 2.0 * math.cos(omega)
    s1 = np.zeros(x.shape[1:])
    s2 = np.zeros(x.shape[1:])
    for i in range(n):
        s0 = x[i] + coeff * s1 - s2
        s2 = s1
        s1 = s0
    # final complex step avoids the cancellation of the power-only formula
    re = s1 - math.cos(omega) * s2
    im = math.sin(omega) * s2
    return np.hypot(re, im)


def dft_bin_magnitude(series, k, window="rectangular", dc_removal=True):
    """Magnitude of DFT bin ``k`` of a real series."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not 0 <= k < x.shape[0]:
        raise BinOutOfRange(f"bin {k} outside [0, {x.shape[0]})")
    return float(goertzel(_prepare(x, window, dc_removal), k))


def _as_stack(window):
    frames = getattr(window, "frames", window)
    if isinstance(frames, (list, tuple)):
        frames = np.stack([getattr(f, "pixels", f) for f in frames])
    return np.asarray(frames, dtype=float)


def band_energy_map(window, cfg=SpectralConfig()):
    """Band magnitudes for every pixel of an (L, H, W) window."""
    x = _as_stack(window)
    if x.shape[0] != cfg.L:
        raise WindowLengthMismatch(f"window has {x.shape[0]} frames, expected L={cfg.L}")
    fs = getattr(window, "fs", None)
    if fs is not None and abs(fs - cfg.fs) > 1e-9:
        raise WindowLengthMismatch(f"window sampled at {fs} Hz, config expects {cfg.fs} Hz")
    x = _prepare(x, cfg.window, cfg.dc_removal)
    bins = cfg.bins
    mags = np.empty(x.shape[1:] + (len(bins),))
    for j, (k, _) in enumerate(bins):
        mags[..., j] = goertzel(x, k)
    return SpectralFeatureMap(mags, bins, cfg.L)


def stft_spectrogram(series, win_len, hop, window="hann", dc_removal=False):
    """Magnitude STFT, shape (win_len // 2 + 1, n_columns)."""
    x = np.asarray(series, dtype=float)
    if not (x.ndim == 1 and x.shape[0] >= win_len >= 4 and 1 <= hop <= win_len):
        raise InvalidWindowing(f"need T >= win_len >= 4 and 1 <= hop <= win_len "
                               f"(T={x.shape[0]}, win_len={win_len}, hop={hop})")
    n_cols = (x.shape[0] - win_len) // hop + 1
    idx = np.arange(win_len)[:, None] + hop * np.arange(n_cols)[None, :]
    seg = x[idx]
    if dc_removal:
        seg = seg - seg.mean(axis=0)
    seg = seg * window_weights(window, win_len)[:, None]
    return np.abs(np.fft.rfft(seg, axis=0))


def write_spectrogram_csv(path, grid, fs, win_len, hop):
    """CSV grid: one row per frequency bin, one column per STFT frame."""
    grid = np.asarray(grid)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["freq_hz"] + [f"t{j * hop / fs:.4f}" for j in range(grid.shape[1])])
        for k in range(grid.shape[0]):
            wr.writerow([f"{k * fs / win_len:.6g}"] + [repr(float(v)) for v in grid[k]])


def _dft_coefficients(x, ks):
    """Complex window-relative DFT coefficients, (B,) + x.shape[1:]."""
    n = x.shape[0]
    tw = np.exp(-2j * np.pi * np.outer(ks, np.arange(n)) / n)
    return np.tensordot(tw, x, axes=(1, 0))


class SlidingDFT:
    """Incremental per-pixel DFT over the last L frames.

    Rectangular window only: each update applies
    ``S_k <- (S_k + x_new - x_oldest) * exp(j 2 pi k / L)``, and the
    accumulators are rebuilt from the ring every ``renorm_interval`` updates
    to bound rounding drift.  Push frames one at a time; the state becomes
    ready once L frames have arrived.
    """

    def __init__(self, shape, cfg=SpectralConfig(), renorm_interval=256):
        if cfg.window != "rectangular":
            raise ValueError("the sliding recurrence requires a rectangular window")
        if renorm_interval < 1:
            raise ValueError("renorm_interval must be >= 1")
        self.cfg = cfg
        self.shape = tuple(shape)
        self.renorm_interval = renorm_interval
        self.bins = cfg.bins
        self._ks = np.array([k for k, _ in self.bins], dtype=float)
        self._rot = np.exp(2j * np.pi * self._ks / cfg.L).reshape((-1,) + (1,) * len(self.shape))
        self._skip_dc = np.array([cfg.dc_removal and k == 0 for k, _ in self.bins])
        self.ring = np.zeros((cfg.L,) + self.shape)
        self.head = 0            # slot holding the oldest frame once full
        self.count = 0
        self.since_renorm = 0
        self.acc = None
        self._latest = None

    @property
    def ready(self):
        return self.acc is not None

    def window(self):
        """Frames currently held, oldest first."""
        return np.roll(self.ring, -self.head, axis=0)

    def renormalize(self):
        self.acc = _dft_coefficients(self.window(), self._ks)
        self.since_renorm = 0

    def _publish(self):
        mags = np.abs(self.acc)
        if self._skip_dc.any():
            mags[self._skip_dc] = 0.0
        self._latest = SpectralFeatureMap(np.moveaxis(mags, 0, -1), self.bins, self.cfg.L)
        return self._latest

    def initialize(self, frames):
        x = _as_stack(frames)
        if x.shape != (self.cfg.L,) + self.shape:
            raise WindowLengthMismatch(f"expected {(self.cfg.L,) + self.shape}, got {x.shape}")
        self.ring[:] = x
        self.head = 0
        self.count = self.cfg.L
        self.renormalize()
        return self._publish()

    def push(self, frame):
        """Add a frame; returns the feature map once the window is full."""
        x = np.asarray(getattr(frame, "pixels", frame), dtype=float)
        if x.shape != self.shape:
            raise ValueError(f"frame shape {x.shape} != {self.shape}")
        if self.acc is None:
            self.ring[self.count] = x
            self.count += 1
            if self.count < self.cfg.L:
                return None
            self.head = 0
            self.renormalize()
            return self._publish()
        return self.update(x)

    def update(self, frame):
        if self.acc is None:
            raise Uninitialized("sliding DFT needs L frames before updating")
        x = np.asarray(getattr(frame, "pixels", frame), dtype=float)
        old = self.ring[self.head]
        delta = x - old
        self.ring[self.head] = x
        self.head = (self.head + 1) % self.cfg.L
        self.count += 1
        self.since_renorm += 1
        if self.since_renorm >= self.renorm_interval:
            self.renormalize()
        else:
            self.acc += delta
            self.acc *= self._rot
        return self._publish()

    def snapshot(self):
        """Latest completed map (immutable copy), or None before warm-up ends."""
        if self._latest is None:
            return None
        return SpectralFeatureMap(self._latest.magnitudes.copy(), self.bins, self.cfg.L)
