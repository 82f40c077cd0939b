"""Two-component 1-D Gaussian mixture over saliency scores.

Fit by EM with a deterministic median-split initialization; the component
with the higher mean is labeled the inlier component (object volumes carry
the high saliency mass). Posterior evaluation runs in log-space. A 1-D
2-means baseline is included for the clustering ablation.
"""

from dataclasses import dataclass

import numpy as np

from .core import as_tensor

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class GmmModel:
    mean_inlier: float
    mean_anomaly: float
    var_inlier: float
    var_anomaly: float
    prior_inlier: float
    prior_anomaly: float

    def __post_init__(self):
        if abs(self.prior_inlier + self.prior_anomaly - 1.0) > 1e-12:
            raise ValueError("priors must sum to 1")
        if self.var_inlier < VAR_FLOOR or self.var_anomaly < VAR_FLOOR:
            raise ValueError("variance below floor")
        if self.mean_inlier < self.mean_anomaly:
            raise ValueError("inlier component must have the higher mean")


def _log_normal_pdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def _loglik(x, model):
    li = _log_normal_pdf(x, model.mean_inlier, model.var_inlier)
    la = _log_normal_pdf(x, model.mean_anomaly, model.var_anomaly)
    m = np.maximum(li, la)
    with np.errstate(divide="ignore"):
        mix = m + np.log(
            model.prior_inlier * np.exp(li - m) + model.prior_anomaly * np.exp(la - m)
        )
    return float(np.sum(mix))


def _degenerate(value):
    """All-identical scores: single effective component, everything inlier."""
    return GmmModel(
        mean_inlier=value, mean_anomaly=value,
        var_inlier=VAR_FLOOR, var_anomaly=VAR_FLOOR,
        prior_inlier=1.0, prior_anomaly=0.0,
    )


def em_fit(scores, max_iters=100, tol=1e-8, rng=None):
    """EM fit; returns (GmmModel, log-likelihood history).

    Initialization splits the scores at the median: the upper half seeds
    the inlier component, the lower half the anomaly component, priors
    0.5/0.5. Deterministic; rng is accepted for interface symmetry but
    unused. The history is non-decreasing (EM ascent).
    """
    x = as_tensor(scores).ravel()
    if x.size == 0:
        raise ValueError("em_fit on empty input")
    if np.min(x) == np.max(x):
        model = _degenerate(float(x[0]))
        return model, [_loglik(x, model)]

    med = np.median(x)
    upper, lower = x[x >= med], x[x < med]
    if lower.size == 0:  # median equals min: split strictly
        lower, upper = x[x <= med], x[x > med]
    mu_i, mu_a = float(np.mean(upper)), float(np.mean(lower))
    var_i = max(float(np.var(upper)), VAR_FLOOR)
    var_a = max(float(np.var(lower)), VAR_FLOOR)
    pi_i = 0.5

    history = []
    prev = -np.inf
    for _ in range(max_iters):
        # E-step: responsibilities in log-space
        li = np.log(pi_i) + _log_normal_pdf(x, mu_i, var_i)
        la = np.log(1.0 - pi_i) + _log_normal_pdf(x, mu_a, var_a) if pi_i < 1.0 \
            else np.full_like(x, -np.inf)
        m = np.maximum(li, la)
        denom = m + np.log(np.exp(li - m) + np.exp(la - m))
        r_i = np.exp(li - denom)

        # M-step
        n_i = float(np.sum(r_i))
        n_a = x.size - n_i
        if n_i <= 0 or n_a <= 0:
            break
        mu_i = float(np.sum(r_i * x) / n_i)
        mu_a = float(np.sum((1.0 - r_i) * x) / n_a)
        var_i = max(float(np.sum(r_i * (x - mu_i) ** 2) / n_i), VAR_FLOOR)
        var_a = max(float(np.sum((1.0 - r_i) * (x - mu_a) ** 2) / n_a), VAR_FLOOR)
        pi_i = n_i / x.size

        ll = float(np.sum(denom))
        history.append(ll)
        if abs(ll - prev) < tol:
            break
        prev = ll

    if mu_i >= mu_a:
        model = GmmModel(mu_i, mu_a, var_i, var_a, pi_i, 1.0 - pi_i)
    else:
        model = GmmModel(mu_a, mu_i, var_a, var_i, 1.0 - pi_i, pi_i)
    return model, history


def posterior(model, score):
    """Bayes posterior of the inlier component, in [0, 1]; vectorized."""
    x = np.asarray(score, dtype=np.float64)
    if model.prior_inlier >= 1.0:
        return np.ones_like(x) if x.ndim else 1.0
    if model.prior_inlier <= 0.0:
        return np.zeros_like(x) if x.ndim else 0.0
    li = np.log(model.prior_inlier) + _log_normal_pdf(x, model.mean_inlier, model.var_inlier)
    la = np.log(model.prior_anomaly) + _log_normal_pdf(x, model.mean_anomaly, model.var_anomaly)
    m = np.maximum(li, la)
    p = np.exp(li - m) / (np.exp(li - m) + np.exp(la - m))
    return p if x.ndim else float(p)


@dataclass(frozen=True)
class InlierMask:
    mask: np.ndarray       # (H, W) bool
    tau: float
    posterior: np.ndarray  # (H, W) in [0, 1]

    @property
    def inlier_count(self):
        return int(np.sum(self.mask))


def inlier_mask(model, field, tau):
    """Threshold the per-volume inlier posterior at tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    post = posterior(model, field.scores)
    return InlierMask(mask=post >= tau, tau=float(tau), posterior=post)


def kmeans2_fit(scores, max_iters=100, rng=None):
    """1-D 2-means; returns (labels, centroids) with label 1 = inlier
    (the higher-centroid cluster). Deterministic min/max initialization."""
    x = as_tensor(scores).ravel()
    if x.size == 0:
        raise ValueError("kmeans2_fit on empty input")
    lo, hi = float(np.min(x)), float(np.max(x))
    if lo == hi:
        return np.ones(x.size, dtype=int), np.array([lo, lo])
    c = np.array([lo, hi])
    for _ in range(max_iters):
        labels = (np.abs(x - c[1]) < np.abs(x - c[0])).astype(int)
        new = np.array([
            np.mean(x[labels == 0]) if np.any(labels == 0) else c[0],
            np.mean(x[labels == 1]) if np.any(labels == 1) else c[1],
        ])
        if np.array_equal(new, c):
            break
        c = new
    if c[1] < c[0]:
        c = c[::-1]
        labels = 1 - labels
    return labels, c
