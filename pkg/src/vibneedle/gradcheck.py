"""Central finite-difference checks of the loss and model gradients."""

from dataclasses import dataclass

import numpy as np

from . import losses, model


def relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_difference(f, x, h=1e-5):
    """Five-point central stencil, O(h^4).

    Where the gradient nearly cancels across terms, the plain two-point
    stencil's O(h^2) truncation error alone can exceed 1e-5 relative.
    """
    return (8.0 * (f(x + h) - f(x - h)) - (f(x + 2 * h) - f(x - 2 * h))) / (12.0 * h)


def random_loss_config(rng):
    return losses.LossConfig(eta=float(rng.choice([1.0, 2.0, 3.0])), gamma=float(rng.choice([2.0, 4.0])),
                             alpha=float(rng.uniform(0, 1)), beta=float(rng.uniform(0, 1)))


# |a - b| enters the difference BCE as -ln(d); below this gap the central
# difference truncation error, not the analytic gradient, dominates
MIN_GAP = 0.02


def interior_fixture(rng, shape=(4, 4), lo=0.05, hi=0.95, min_gap=MIN_GAP):
    """Predictions away from the clamp and from the |a - b| kink, binary targets."""
    a = rng.uniform(lo, hi, shape)
    b = rng.uniform(lo, hi, shape)
    close = np.abs(a - b) < min_gap
    while np.any(close):
        b[close] = rng.uniform(lo, hi, int(close.sum()))
        close = np.abs(a - b) < min_gap
    y_a = rng.random(shape) < 0.4
    y_b = rng.random(shape) < 0.4
    return a, b, y_a, y_b


def loss_grad_error(a, b, y_a, y_b, cfg, h=1e-5, diff_active=True):
    """Max relative error of dL/dpred over every pixel of both maps."""
    g_a, g_b = losses.total_loss_gradient(a, b, y_a, y_b, cfg, diff_active)
    worst = 0.0
    for which, g in ((0, g_a), (1, g_b)):
        for idx in np.ndindex(g.shape):
            def f(v):
                maps = [a.copy(), b.copy()]
                maps[which][idx] = v
                return losses.total_loss(maps[0], maps[1], y_a, y_b, cfg, diff_active)
            num = central_difference(f, (a, b)[which][idx], h)
            worst = max(worst, float(relative_error(g[idx], num)))
    return worst


def param_grad_error(features_t, features_td, y_t, y_td, params, cfg, h=1e-5, diff_active=True):
    """Max relative error of dL/dparams through forward + loss."""
    def total(p):
        return losses.total_loss(model.forward(features_t, p), model.forward(features_td, p),
                                 y_t, y_td, cfg, diff_active)

    p_t = model.forward(features_t, params)
    p_td = model.forward(features_td, params)
    g_t, g_td = losses.total_loss_gradient(p_t, p_td, y_t, y_td, cfg, diff_active)
    analytic = (model.backward(features_t, params, g_t).as_vector()
                + model.backward(features_td, params, g_td).as_vector())
    vec = params.as_vector()
    worst = 0.0
    for i in range(vec.size):
        def f(v):
            w = vec.copy()
            w[i] = v
            return total(params.with_vector(w))
        num = central_difference(f, vec[i], h)
        worst = max(worst, float(relative_error(analytic[i], num)))
    return worst


def interior_model_fixture(rng, shape=(4, 4), n_bands=2, min_gap=MIN_GAP):
    """Features and params whose two output maps differ by >= min_gap everywhere."""
    while True:
        f_t = rng.uniform(0.0, 2.0, shape + (n_bands,))
        f_td = rng.uniform(0.0, 2.0, shape + (n_bands,))
        params = model.ModelParams(rng.normal(0, 0.5, 2 * n_bands), rng.normal(0, 0.5), n_bands, n_bands)
        gap = np.abs(model.forward(f_t, params) - model.forward(f_td, params))
        if gap.min() >= min_gap:
            return f_t, f_td, params


@dataclass
class GradCheckReport:
    trials: int
    points: int
    max_loss_error: float
    max_param_error: float

    @property
    def max_error(self):
        return max(self.max_loss_error, self.max_param_error)


def run(trials=100, seed=0, shape=(4, 4), n_bands=2):
    """One random config and fixture per trial; checks every pixel and parameter."""
    rng = np.random.default_rng(seed)
    worst_loss, worst_param, points = 0.0, 0.0, 0
    for _ in range(trials):
        cfg = random_loss_config(rng)
        a, b, y_a, y_b = interior_fixture(rng, shape)
        worst_loss = max(worst_loss, loss_grad_error(a, b, y_a, y_b, cfg))
        points += 2 * a.size
        f_t, f_td, params = interior_model_fixture(rng, shape, n_bands)
        worst_param = max(worst_param, param_grad_error(f_t, f_td, y_a, y_b, params, cfg))
    return GradCheckReport(trials, points, worst_loss, worst_param)
