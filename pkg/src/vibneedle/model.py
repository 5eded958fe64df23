"""Logistic pixel classifier over spectral band features.

Each pixel sees its B band magnitudes plus their 3x3 neighbourhood mean
(K = B context features, periodic boundary), so ``z = w . f + b`` and the
output is ``sigmoid(z)``.  Small enough that every gradient can be checked
by hand, yet it trains under the paired-window objective.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.special import expit

from .errors import DataError, DimensionMismatch

MAGIC = b"VNMP"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class ModelParams:
    weights: np.ndarray      # (B + K,)
    bias: float
    n_bands: int
    n_context: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.size != self.n_bands + self.n_context:
            raise DimensionMismatch(f"{self.weights.size} weights for B={self.n_bands}, K={self.n_context}")
        self.bias = float(self.bias)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("parameters must be finite")

    @classmethod
    def zeros(cls, n_bands, bias=0.0):
        return cls(np.zeros(2 * n_bands), bias, n_bands, n_bands)

    def as_vector(self):
        return np.append(self.weights, self.bias)

    def with_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        return ModelParams(vec[:-1].copy(), float(vec[-1]), self.n_bands, self.n_context)

    def to_bytes(self):
        return _HEADER.pack(MAGIC, VERSION, self.n_bands, self.n_context) + self.as_vector().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < _HEADER.size:
            raise DataError("parameter file truncated")
        magic, version, b, k = _HEADER.unpack_from(blob)
        if magic != MAGIC or version != VERSION:
            raise DataError(f"not a parameter file (magic={magic!r}, version={version})")
        vec = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        if vec.size != b + k + 1:
            raise DataError(f"expected {b + k + 1} values, found {vec.size}")
        return cls(vec[:-1].copy(), float(vec[-1]), b, k)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _magnitudes(features):
    return np.asarray(getattr(features, "magnitudes", features), dtype=float)


def stack_features(features):
    """(H, W, 2B): band magnitudes followed by their 3x3 wrapped mean."""
    mags = _magnitudes(features)
    context = uniform_filter(mags, size=(3, 3, 1), mode="wrap")
    return np.concatenate([mags, context], axis=-1)


def _check(stacked, params):
    if stacked.shape[-1] != params.weights.size:
        raise DimensionMismatch(f"feature dim {stacked.shape[-1]} != {params.weights.size}")


def forward_stacked(stacked, params):
    _check(stacked, params)
    return expit(stacked @ params.weights + params.bias)


def forward(features, params):
    mags = _magnitudes(features)
    if mags.shape[-1] != params.n_bands:
        raise DimensionMismatch(f"{mags.shape[-1]} bands, params expect {params.n_bands}")
    return forward_stacked(stack_features(mags), params)


def backward_stacked(stacked, params, upstream, prob=None):
    _check(stacked, params)
    if prob is None:
        prob = forward_stacked(stacked, params)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != prob.shape:
        raise DimensionMismatch(f"upstream {upstream.shape} != output {prob.shape}")
    dz = upstream * prob * (1.0 - prob)
    gw = np.tensordot(dz, stacked, axes=(tuple(range(dz.ndim)), tuple(range(dz.ndim))))
    return ModelParams(gw, float(dz.sum()), params.n_bands, params.n_context)


def backward(features, params, upstream):
    """Gradient w.r.t. params given dLoss/dprob per pixel."""
    mags = _magnitudes(features)
    if mags.shape[-1] != params.n_bands:
        raise DimensionMismatch(f"{mags.shape[-1]} bands, params expect {params.n_bands}")
    return backward_stacked(stack_features(mags), params, upstream)
