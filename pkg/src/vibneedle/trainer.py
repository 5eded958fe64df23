"""Paired-window training: Adam on the weighted focal + intersection + difference loss."""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import dataio, losses, model, postproc, spectral
from .errors import EmptyDataset, NonFiniteLoss, VideoTooShort
from .evaluate import make_record, summarize


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    delta: int = 5
    L: int = 30
    max_epochs: int = 20
    patience: int = 2
    diff_loss_start_epoch: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # initial output probability, as in the usual focal-loss prior init
    init_prior: float = 0.01
    augment: bool = False
    spectral_cfg: spectral.SpectralConfig = spectral.SpectralConfig()

    def __post_init__(self):
        if self.batch_size < 1 or self.delta < 1 or self.diff_loss_start_epoch < 1:
            raise ValueError("batch_size, delta and diff_loss_start_epoch must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.spectral_cfg.L != self.L:
            raise ValueError(f"spectral window {self.spectral_cfg.L} != L={self.L}")


@dataclass
class PairedSample:
    window_t: np.ndarray        # (L, H, W), final frame at end_index - delta
    window_td: np.ndarray       # (L, H, W), final frame at end_index
    gt_t: np.ndarray
    gt_td: np.ndarray
    end_index: int
    video_id: str = ""
    delta: int = 5
    tip_td: Optional[np.ndarray] = None
    angle_td: Optional[float] = None
    spacing: Optional[tuple] = None


def make_pairs(frames, masks, cfg=TrainConfig(), video_id=None, tips=None, angles=None, spacing=None):
    """One pair per end index t in [L + delta - 1, T - 1].

    Windows are read-only views into ``frames``; masks are copied so no two
    pairs share a ground-truth buffer.
    """
    frames = np.asarray(frames)
    T, L, d = frames.shape[0], cfg.L, cfg.delta
    if T < L + d:
        raise VideoTooShort(f"{T} frames < L + delta = {L + d}")
    if video_id is None:
        video_id = f"video@{id(frames):x}"
    view = frames.view()
    view.flags.writeable = False
    pairs = []
    for t in range(L + d - 1, T):
        pairs.append(PairedSample(
            view[t - d - L + 1:t - d + 1], view[t - L + 1:t + 1],
            np.array(masks[t - d], dtype=bool), np.array(masks[t], dtype=bool),
            t, video_id, d,
            None if tips is None else np.array(tips[t], dtype=float),
            None if angles is None else float(angles[t]), spacing))
    return pairs


def pairs_from_video(video, cfg=TrainConfig()):
    return make_pairs(video.frames, video.masks, cfg, video.video_id, video.tips, video.angles, video.spacing)


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta, grad):
        grad = np.asarray(grad, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class StepRecord:
    step: int
    epoch: int
    focal_t: float
    focal_td: float
    inter: float
    diff: float
    total: float
    diff_active: bool


@dataclass
class TrainResult:
    params: model.ModelParams
    history: list
    epoch_losses: list
    val_losses: list
    best_epoch: int
    stopped_early: bool


def window_features(window, cfg):
    return model.stack_features(spectral.band_energy_map(window, cfg).magnitudes)


class FeatureCache:
    """Stacked features per (video id, final frame index)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._store = {}

    def get(self, video_id, end, window):
        key = (video_id, end)
        f = self._store.get(key)
        if f is None:
            f = window_features(window, self.cfg)
            self._store[key] = f
        return f

    def pair(self, p):
        return (self.get(p.video_id, p.end_index - p.delta, p.window_t),
                self.get(p.video_id, p.end_index, p.window_td))


def _pair_loss_and_grad(params, f_t, f_td, gt_t, gt_td, loss_cfg, diff_active):
    p_t = model.forward_stacked(f_t, params)
    p_td = model.forward_stacked(f_td, params)
    terms = losses.loss_terms(p_t, p_td, gt_t, gt_td, loss_cfg, diff_active)
    if not np.isfinite(terms.total):
        return terms, np.full(params.weights.size + 1, np.nan)
    g_t, g_td = losses.total_loss_gradient(p_t, p_td, gt_t, gt_td, loss_cfg, diff_active)
    return terms, _grad_vector(f_t, p_t, g_t) + _grad_vector(f_td, p_td, g_td)


def _grad_vector(stacked, prob, upstream):
    # same contraction as model.backward_stacked, without finiteness validation
    dz = upstream * prob * (1.0 - prob)
    gw = np.tensordot(dz, stacked, axes=(tuple(range(dz.ndim)), tuple(range(dz.ndim))))
    return np.append(gw.ravel(), dz.sum())


def pair_loss(params, f_t, f_td, gt_t, gt_td, loss_cfg, diff_active=True):
    p_t = model.forward_stacked(f_t, params)
    p_td = model.forward_stacked(f_td, params)
    return losses.loss_terms(p_t, p_td, gt_t, gt_td, loss_cfg, diff_active)


def initial_params(n_bands, cfg):
    return model.ModelParams.zeros(n_bands, bias=math.log(cfg.init_prior / (1.0 - cfg.init_prior)))


def _augmented_features(p, cfg, epoch, index):
    rng = np.random.default_rng([cfg.seed, epoch, index])
    params = dataio.draw_augment(rng)
    w_t, m_t, _ = dataio.apply_augment(p.window_t, p.gt_t, None, params)
    w_td, m_td, _ = dataio.apply_augment(p.window_td, p.gt_td, None, params)
    return window_features(w_t, cfg.spectral_cfg), window_features(w_td, cfg.spectral_cfg), m_t, m_td


def validation_loss(params, pairs, loss_cfg, cache):
    """Mean total loss with every term active."""
    vals = [pair_loss(params, *cache.pair(p), p.gt_t, p.gt_td, loss_cfg, True).total for p in pairs]
    return float(np.mean(vals))


def train(dataset, cfg=TrainConfig(), loss_cfg=losses.LossConfig(), val=None, init=None):
    """Minibatch Adam over paired samples.

    The difference term joins from epoch ``diff_loss_start_epoch`` (epochs
    count from 1).  With a validation set, training stops after ``patience``
    epochs without improvement and the best parameters are returned.
    """
    if not dataset:
        raise EmptyDataset("no training pairs")
    loss_cfg = replace(loss_cfg, delta=cfg.delta)
    n_bands = len(cfg.spectral_cfg.bins)
    params = init if init is not None else initial_params(n_bands, cfg)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    cache = FeatureCache(cfg.spectral_cfg)
    history, epoch_losses, val_losses = [], [], []
    best_val, best_params, best_epoch, stale = math.inf, params, 0, 0
    stopped = False
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        diff_active = epoch >= cfg.diff_loss_start_epoch
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
        totals = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad = np.zeros(params.weights.size + 1)
            acc = np.zeros(5)
            for idx in batch:
                p = dataset[idx]
                if cfg.augment:
                    f_t, f_td, g_t, g_td = _augmented_features(p, cfg, epoch, int(idx))
                else:
                    (f_t, f_td), g_t, g_td = cache.pair(p), p.gt_t, p.gt_td
                terms, g = _pair_loss_and_grad(params, f_t, f_td, g_t, g_td, loss_cfg, diff_active)
                acc += (terms.focal_t, terms.focal_td, terms.inter, terms.diff, terms.total)
                grad += g
            acc /= len(batch)
            grad /= len(batch)
            if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(grad))):
                raise NonFiniteLoss(f"non-finite loss/gradient at epoch {epoch}, step {step}: "
                                    f"terms={acc.tolist()}, params={params.as_vector().tolist()}")
            step += 1
            history.append(StepRecord(step, epoch, *map(float, acc), diff_active))
            totals.append(acc[4])
            params = params.with_vector(opt.step(params.as_vector(), grad))
        epoch_losses.append(float(np.mean(totals)))
        if val:
            v = validation_loss(params, val, loss_cfg, cache)
            val_losses.append(v)
            if v < best_val:
                best_val, best_params, best_epoch, stale = v, params, epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped = True
                    break
    if not val:
        best_params, best_epoch = params, len(epoch_losses)
    return TrainResult(best_params, history, epoch_losses, val_losses, best_epoch, stopped)


HISTORY_FIELDS = ("step", "epoch", "L_f_t", "L_f_tD", "L_inter", "L_diff", "total")


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HISTORY_FIELDS)
        for r in history:
            wr.writerow([r.step, r.epoch, repr(r.focal_t), repr(r.focal_td), repr(r.inter),
                         repr(r.diff), repr(r.total)])


def detect_pairs(params, pairs, spectral_cfg, threshold=0.5, inlier_tol=2.0, iterations=500, seed=0):
    """Detection on the final frame of each pair's later window."""
    cache = FeatureCache(spectral_cfg)
    out = []
    for p in pairs:
        prob = model.forward_stacked(cache.get(p.video_id, p.end_index, p.window_td), params)
        out.append(postproc.detect_needle(prob, p.spacing, threshold, inlier_tol, iterations, seed))
    return out


def evaluate_pairs(params, pairs, spectral_cfg, threshold=0.5, **kw):
    dets = detect_pairs(params, pairs, spectral_cfg, threshold, **kw)
    records = [make_record((p.video_id, p.end_index), d, p.tip_td, p.angle_td, p.spacing)
               for p, d in zip(pairs, dets)]
    return summarize(records)


ABLATION_GRID = ((0.0, 0.0), (0.5, 0.0), (0.5, 0.02), (0.0, 0.02))


@dataclass
class AblationRow:
    alpha: float
    beta: float
    summary: object
    result: TrainResult = field(repr=False)

    @property
    def label(self):
        return f"alpha={self.alpha:.2f} beta={self.beta:.2f}"


def ablation_sweep(train_pairs, test_pairs, grid=ABLATION_GRID, cfg=TrainConfig(),
                   loss_cfg=losses.LossConfig(), val_pairs=None, threshold=0.5, workers=1):
    """Train one model per (alpha, beta) with identical seed and schedule."""
    def cell(ab):
        a, b = ab
        res = train(train_pairs, cfg, replace(loss_cfg, alpha=a, beta=b), val=val_pairs)
        return AblationRow(a, b, evaluate_pairs(res.params, test_pairs, cfg.spectral_cfg, threshold), res)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(cell, grid))
    return [cell(ab) for ab in grid]


def ablation_table(rows):
    from .evaluate import summary_table
    return summary_table([(r.label, r.summary) for r in rows], label_header="Loss weights")
