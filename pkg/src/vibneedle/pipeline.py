"""Streaming detection: ring of L frames -> sliding DFT -> mask -> line -> tip."""

import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model, postproc, spectral
from .errors import ShapeMismatch

BUDGET_MS = 33.0


@dataclass(frozen=True)
class DetectorConfig:
    """How a feature map becomes a binary needle mask.

    ``source="spectral"`` keeps pixels whose summed band energy reaches
    ``max(energy_floor, energy_factor * median)``; ``source="model"`` runs
    the trained classifier and binarizes at ``threshold``.
    """
    source: str = "spectral"
    params: Optional[model.ModelParams] = None
    threshold: float = 0.5
    energy_factor: float = 8.0
    energy_floor: float = 1e-3
    inlier_tol: float = 2.0
    iterations: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("spectral", "model"):
            raise ValueError(f"unknown detection source {self.source!r}")
        if self.source == "model" and self.params is None:
            raise ValueError("model source needs trained params")


def energy_mask(energy, factor=8.0, floor=1e-3):
    thr = max(floor, factor * float(np.median(energy)))
    return energy >= thr


def feature_mask(fmap, det_cfg):
    if det_cfg.source == "spectral":
        return energy_mask(fmap.energy, det_cfg.energy_factor, det_cfg.energy_floor)
    prob = model.forward(fmap, det_cfg.params)
    return postproc.binarize(prob, det_cfg.threshold)[0]


def detect_from_features(fmap, spacing, det_cfg=DetectorConfig()):
    mask = feature_mask(fmap, det_cfg)
    return postproc.detect_from_mask(mask, spacing, det_cfg.inlier_tol, det_cfg.iterations, det_cfg.seed)


def intensity_detect(frame, spacing, percentile=99.0, det_cfg=DetectorConfig()):
    """Single-frame baseline: keep the brightest pixels, then the same line/tip post-processing."""
    x = np.asarray(getattr(frame, "pixels", frame), dtype=float)
    mask = x >= np.percentile(x, percentile)
    return postproc.detect_from_mask(mask, spacing, det_cfg.inlier_tol, det_cfg.iterations, det_cfg.seed)


class StreamState:
    """Single-writer streaming detector.

    ``push_frame`` returns None while the first L - 1 frames fill the ring
    and afterwards the Detection for the newest frame (None when nothing is
    detectable).  ``latest`` may be read from other threads.
    """

    def __init__(self, shape, spacing, spectral_cfg=spectral.SpectralConfig(),
                 det_cfg=DetectorConfig(), renorm_interval=256):
        self.shape = tuple(shape)
        self.spacing = tuple(spacing)
        self.spectral_cfg = spectral_cfg
        self.det_cfg = det_cfg
        self.sdft = spectral.SlidingDFT(self.shape, spectral_cfg, renorm_interval)
        self.frames_seen = 0
        self.latencies_ms = []
        self.status = "warmup"
        self._latest = None
        self._lock = threading.Lock()

    @property
    def warmup(self):
        return self.spectral_cfg.L - 1

    @property
    def latest(self):
        with self._lock:
            return self._latest

    def push_frame(self, frame):
        x = np.asarray(getattr(frame, "pixels", frame), dtype=float)
        if x.shape != self.shape:
            raise ShapeMismatch(f"frame shape {x.shape} != stream shape {self.shape}")
        t0 = time.perf_counter()
        fmap = self.sdft.push(x)
        self.frames_seen += 1
        if fmap is None:
            return None
        det = detect_from_features(fmap, self.spacing, self.det_cfg)
        self.latencies_ms.append((time.perf_counter() - t0) * 1e3)
        self.status = "detected" if det is not None else "no_detection"
        with self._lock:
            self._latest = det
        return det


def detect_offline(frames, spacing, spectral_cfg=spectral.SpectralConfig(), det_cfg=DetectorConfig()):
    """Per-window batch reference: {final frame index: Detection or None}."""
    x = np.asarray(frames, dtype=float)
    L = spectral_cfg.L
    out = {}
    for t in range(L - 1, x.shape[0]):
        fmap = spectral.band_energy_map(x[t - L + 1:t + 1], spectral_cfg)
        out[t] = detect_from_features(fmap, spacing, det_cfg)
    return out


def replay(frames, spacing, spectral_cfg=spectral.SpectralConfig(), det_cfg=DetectorConfig(),
           renorm_interval=256):
    """Stream every frame through a fresh state: {frame index: Detection or None}."""
    x = np.asarray(frames, dtype=float)
    state = StreamState(x.shape[1:], spacing, spectral_cfg, det_cfg, renorm_interval)
    out = {}
    for t in range(x.shape[0]):
        det = state.push_frame(x[t])
        if t >= state.warmup:
            out[t] = det
    return out, state


@dataclass
class LatencyReport:
    p50_ms: float
    p95_ms: float
    max_ms: float
    frames: int
    warmup: int
    repetitions: int

    def within(self, budget_ms=BUDGET_MS):
        return self.p95_ms <= budget_ms

    def __str__(self):
        return (f"p50={self.p50_ms:.2f} ms  p95={self.p95_ms:.2f} ms  max={self.max_ms:.2f} ms  "
                f"frames={self.frames}  warmup={self.warmup}  reps={self.repetitions}")


def benchmark(make_state, frames, repetitions=1):
    """Steady-state per-frame latency over ``repetitions`` full replays.

    ``make_state`` builds a fresh StreamState for each repetition.
    """
    x = np.asarray(frames, dtype=float)
    samples = []
    warmup = 0
    for _ in range(repetitions):
        state = make_state()
        if x.shape[0] < 2 * state.spectral_cfg.L:
            raise ValueError("benchmark sequence must hold at least 2L frames")
        for t in range(x.shape[0]):
            state.push_frame(x[t])
        samples.extend(state.latencies_ms)
        warmup = state.warmup
    s = np.asarray(samples)
    return LatencyReport(float(np.percentile(s, 50)), float(np.percentile(s, 95)), float(s.max()),
                         int(s.size), warmup, repetitions)
