"""Focal, intersection and difference losses for paired predictions.

Every loss is mean-reduced over pixels.  Predictions are clamped to
``[eps, 1 - eps]`` before any log or power; targets are never clamped.
Gradients are zero wherever the clamp is active.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonBinaryTarget, ShapeMismatch


@dataclass(frozen=True)
class LossConfig:
    eta: float = 2.0
    gamma: float = 4.0
    alpha: float = 0.5
    beta: float = 0.02
    delta: int = 5
    eps: float = 1e-7
    # "printed": negative branch (1 - y)(1 - p)^gamma p^eta log(1 - p), as published.
    # "canonical": heatmap-style (1 - y)^gamma p^eta log(1 - p).
    focal_form: str = "printed"

    def __post_init__(self):
        if self.eta < 0 or self.gamma < 0:
            raise ValueError("eta and gamma must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0.0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.focal_form not in ("printed", "canonical"):
            raise ValueError(f"unknown focal_form {self.focal_form!r}")


@dataclass
class LossTerms:
    focal_t: float
    focal_td: float
    inter: float
    diff: float
    total: float
    diff_active: bool


def _check_shapes(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeMismatch(f"shape {np.shape(a)} != {shape}")


def _check_binary(y):
    y = np.asarray(y)
    if y.dtype != bool and not np.all((y == 0) | (y == 1)):
        raise NonBinaryTarget("target must contain only 0 and 1")


def _clamp(p, eps):
    p = np.asarray(p, dtype=float)
    return np.clip(p, eps, 1.0 - eps), (p > eps) & (p < 1.0 - eps)


def _focal_pixel(p, y, cfg):
    """Per-pixel loss and d(loss)/dp at clamped p."""
    eta, gamma = cfg.eta, cfg.gamma
    lp, l1p = np.log(p), np.log1p(-p)
    q = 1.0 - p
    pos = q ** eta * lp
    dpos = -eta * q ** (eta - 1.0) * lp + q ** eta / p if eta != 0 else 1.0 / p
    if cfg.focal_form == "printed":
        neg = q ** gamma * p ** eta * l1p
        dneg = (-gamma * q ** (gamma - 1.0) * p ** eta * l1p if gamma != 0 else 0.0)
        dneg = dneg + (eta * q ** gamma * p ** (eta - 1.0) * l1p if eta != 0 else 0.0)
        dneg = dneg - q ** (gamma - 1.0) * p ** eta
        w_neg = 1.0 - y
    else:
        neg = p ** eta * l1p
        dneg = (eta * p ** (eta - 1.0) * l1p if eta != 0 else 0.0) - p ** eta / q
        w_neg = (1.0 - y) ** gamma
    loss = -(y * pos + w_neg * neg)
    grad = -(y * dpos + w_neg * dneg)
    return loss, grad


def focal_loss(pred, target, cfg=LossConfig()):
    _check_shapes(pred, target)
    _check_binary(target)
    p, _ = _clamp(pred, cfg.eps)
    y = np.asarray(target, dtype=float)
    loss, _ = _focal_pixel(p, y, cfg)
    return float(loss.mean())


def focal_loss_grad(pred, target, cfg=LossConfig()):
    _check_shapes(pred, target)
    _check_binary(target)
    p, live = _clamp(pred, cfg.eps)
    y = np.asarray(target, dtype=float)
    _, g = _focal_pixel(p, y, cfg)
    return np.where(live, g, 0.0) / p.size


def bce(pred, target, eps=1e-7):
    _check_shapes(pred, target)
    p, _ = _clamp(pred, eps)
    t = np.asarray(target, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("BCE target must lie in [0, 1]")
    return float(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean())


def bce_grad(pred, target, eps=1e-7):
    _check_shapes(pred, target)
    p, live = _clamp(pred, eps)
    t = np.asarray(target, dtype=float)
    g = -t / p + (1.0 - t) / (1.0 - p)
    return np.where(live, g, 0.0) / p.size


def intersection_mask(a, b):
    _check_shapes(a, b)
    return np.asarray(a, dtype=float) * np.asarray(b, dtype=float)


def difference_mask(a, b):
    _check_shapes(a, b)
    return np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def loss_terms(pred_t, pred_td, gt_t, gt_td, cfg=LossConfig(), diff_active=True):
    """All four loss components and their weighted total."""
    _check_shapes(pred_t, pred_td, gt_t, gt_td)
    _check_binary(gt_t)
    _check_binary(gt_td)
    f_t = focal_loss(pred_t, gt_t, cfg)
    f_td = focal_loss(pred_td, gt_td, cfg)
    inter = bce(intersection_mask(pred_t, pred_td), intersection_mask(gt_t, gt_td), cfg.eps)
    total = f_t + f_td + cfg.alpha * inter
    diff = 0.0
    if diff_active:
        diff = bce(difference_mask(pred_t, pred_td), difference_mask(gt_t, gt_td), cfg.eps)
        total = total + cfg.beta * diff
    return LossTerms(f_t, f_td, inter, diff, total, diff_active)


def total_loss(pred_t, pred_td, gt_t, gt_td, cfg=LossConfig(), diff_active=True):
    return loss_terms(pred_t, pred_td, gt_t, gt_td, cfg, diff_active).total


def total_loss_gradient(pred_t, pred_td, gt_t, gt_td, cfg=LossConfig(), diff_active=True):
    """(dL/dpred_t, dL/dpred_td) of the weighted total."""
    _check_shapes(pred_t, pred_td, gt_t, gt_td)
    _check_binary(gt_t)
    _check_binary(gt_td)
    a = np.asarray(pred_t, dtype=float)
    b = np.asarray(pred_td, dtype=float)
    g_a = focal_loss_grad(a, gt_t, cfg)
    g_b = focal_loss_grad(b, gt_td, cfg)
    if cfg.alpha:
        g_inter = cfg.alpha * bce_grad(a * b, intersection_mask(gt_t, gt_td), cfg.eps)
        g_a = g_a + g_inter * b
        g_b = g_b + g_inter * a
    if diff_active and cfg.beta:
        g_diff = cfg.beta * bce_grad(np.abs(a - b), difference_mask(gt_t, gt_td), cfg.eps)
        s = np.sign(a - b)
        g_a = g_a + g_diff * s
        g_b = g_b - g_diff * s
    return g_a, g_b
