"""Inlier-centric activation range calibration.

Per layer: pool activations/gradients/saliency over the calibration scenes,
fit the saliency mixture, build per-scene inlier masks, initialize the range
by min-max over the masked activations, then grid-search shrunken ranges
minimizing the diagonal-Fisher-weighted quantization objective restricted
to inlier volumes. Layers are processed in forward order with previously
calibrated layers (and all weights) already fake-quantized, so quantization
error propagates the way it will at inference.
"""

from dataclasses import dataclass

import numpy as np

from .detector import N_ACT_LAYERS, backward_heatmap, forward_quantized
from .mixture import em_fit, kmeans2_fit, posterior
from .quantizer import calibrate_minmax, calibrate_symmetric, fake_quantize, scale_grid
from .saliency import TopKLossSpec, loss_gradient, volume_saliency

METHODS = ("inlierq", "baseline_minmax", "baseline_allvol", "kmeans_ablation")


@dataclass(frozen=True)
class CalibConfig:
    bits_weights: int = 4
    bits_acts: int = 4
    tau: float = 0.5
    k: int = 4
    t_steps: int = 12          # refinement evaluations (0 = min-max init only)
    lambda_inlier: float = 1.0
    lambda_anomaly: float = 0.0
    n_calib: int = 64
    grid_steps: int = 12
    seed: int = 123

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bits_weights < 2 or self.bits_acts < 2:
            raise ValueError("bit-widths must be >= 2")
        if self.grid_steps < 1:
            raise ValueError("grid_steps must be >= 1")
        if self.t_steps < 0:
            raise ValueError("t_steps must be >= 0")
        if self.n_calib < 1:
            raise ValueError("n_calib must be >= 1")
        if self.lambda_inlier < 0 or self.lambda_anomaly < 0:
            raise ValueError("region weights must be >= 0")
        if self.lambda_inlier == 0 and self.lambda_anomaly == 0:
            raise ValueError("at least one region weight must be positive")


@dataclass(frozen=True)
class LayerStats:
    activations: np.ndarray   # (n_scenes, C, H, W)
    gradients: np.ndarray     # (n_scenes, C, H, W)
    saliency: np.ndarray      # (n_scenes, H, W)


@dataclass
class LayerResult:
    layer_id: int
    params: object            # chosen QuantParams
    objective: float
    candidate_curve: list     # objective per grid candidate, base first
    inlier_mse: float
    all_mse: float
    inlier_frac: float
    mixture: object = None    # fitted GmmModel, when a mixture was used
    masks: np.ndarray = None  # (n_scenes, H, W) bool inlier masks


def collect_statistics(model, scenes, spec, weight_params=None, act_params=None):
    """Forward + top-K loss backward on every scene; per-layer pooled stats."""
    if not scenes:
        raise ValueError("no calibration scenes")
    acts = [[] for _ in range(N_ACT_LAYERS)]
    grads = [[] for _ in range(N_ACT_LAYERS)]
    sal = [[] for _ in range(N_ACT_LAYERS)]
    for scene in scenes:
        heatmap, trace = forward_quantized(model, scene, weight_params, act_params)
        d_heat = loss_gradient(heatmap, spec)
        gtrace = backward_heatmap(model, trace, d_heat)
        for lid in range(N_ACT_LAYERS):
            acts[lid].append(trace.activations[lid])
            grads[lid].append(gtrace.gradients[lid])
            sal[lid].append(volume_saliency(gtrace, lid).scores)
    return [
        LayerStats(
            activations=np.stack(acts[lid]),
            gradients=np.stack(grads[lid]),
            saliency=np.stack(sal[lid]),
        )
        for lid in range(N_ACT_LAYERS)
    ]


def fim_diag(gradients):
    """Diagonal Fisher estimate: elementwise mean of squared gradients
    across calibration samples. gradients: (n_scenes, C, H, W)."""
    g = np.asarray(gradients, dtype=np.float64)
    if g.ndim < 1 or g.shape[0] < 1:
        raise ValueError("need at least one gradient sample")
    return np.mean(g ** 2, axis=0)


def bernoulli_score_sq_mean(h, n_draws, rng):
    """Monte-Carlo mean of the squared Bernoulli score (z - h)^2 over
    pseudo-label draws z ~ Bernoulli(h); converges to h(1-h), the analytic
    Fisher information of the logit."""
    z = (rng.uniform(0.0, 1.0, n_draws) < h).astype(np.float64)
    return float(np.mean((z - h) ** 2))


def inlier_objective(x, candidate, fim, masks, lambdas=(1.0, 0.0)):
    """Fisher-weighted squared perturbation, averaged per region.

    x: (n, C, H, W) pooled activations; fim: (C, H, W); masks: (n, H, W)
    bool, broadcast over channels. Returns
    lambda_I * mean-over-inlier-volumes + lambda_A * mean-over-anomaly-volumes
    of sum_c fim * (fake_quantize(x) - x)^2.
    """
    lam_i, lam_a = lambdas
    dx = fake_quantize(x, candidate) - x
    per_volume = np.einsum("chw,nchw->nhw", fim, dx ** 2, optimize=True)
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != per_volume.shape:
        raise ValueError(f"mask shape {masks.shape} != volume shape {per_volume.shape}")
    total = 0.0
    n_in = int(np.sum(masks))
    if lam_i > 0:
        if n_in == 0:
            raise ValueError("empty inlier set with a positive inlier weight")
        total += lam_i * float(np.sum(per_volume[masks]) / n_in)
    n_out = masks.size - n_in
    if lam_a > 0 and n_out > 0:
        total += lam_a * float(np.sum(per_volume[~masks]) / n_out)
    return total


def _masked_mse(x, params, masks):
    dx = fake_quantize(x, params) - x
    sel = np.broadcast_to(masks[:, None, :, :], x.shape)
    return float(np.mean(dx[sel] ** 2)) if np.any(sel) else 0.0


def optimize_layer(layer_id, x, fim, masks, cfg, mixture=None):
    """Min-max init over the inlier-masked activations, then grid refinement
    of the inlier objective. Ties break toward the larger scale."""
    chan_masks = np.broadcast_to(np.asarray(masks, bool)[:, None, :, :], x.shape)
    base = calibrate_minmax(x, cfg.bits_acts, mask=chan_masks)
    lambdas = (cfg.lambda_inlier, cfg.lambda_anomaly)
    n_eval = min(cfg.t_steps, cfg.grid_steps)
    if n_eval == 0:
        curve = [inlier_objective(x, base, fim, masks, lambdas)]
        chosen, best = base, curve[0]
    else:
        candidates = scale_grid(base, cfg.grid_steps)[:n_eval]
        curve = [inlier_objective(x, c, fim, masks, lambdas) for c in candidates]
        best_idx = 0  # candidates are ordered by decreasing scale, so the
        for i, v in enumerate(curve):  # first strict improvement wins ties
            if v < curve[best_idx]:
                best_idx = i
        chosen, best = candidates[best_idx], curve[best_idx]
    return LayerResult(
        layer_id=layer_id,
        params=chosen,
        objective=best,
        candidate_curve=curve,
        inlier_mse=_masked_mse(x, chosen, np.asarray(masks, bool)),
        all_mse=float(np.mean((fake_quantize(x, chosen) - x) ** 2)),
        inlier_frac=float(np.mean(masks)),
        mixture=mixture,
        masks=np.asarray(masks, bool),
    )


def optimize_baseline_layer(layer_id, x, fim, cfg):
    """All-volume variant: identical machinery with the mask identically true."""
    masks = np.ones((x.shape[0],) + x.shape[2:], dtype=bool)
    return optimize_layer(layer_id, x, fim, masks, cfg)


def _layer_masks(method, stats, cfg):
    """Per-scene inlier masks for one layer, plus the fitted mixture (if any)."""
    n, h, w = stats.saliency.shape
    if method in ("baseline_minmax", "baseline_allvol"):
        return np.ones((n, h, w), dtype=bool), None
    pooled = stats.saliency.ravel()
    if method == "inlierq":
        model, _ = em_fit(pooled)
        post = posterior(model, stats.saliency)
        return post >= cfg.tau, model
    if method == "kmeans_ablation":
        labels, centroids = kmeans2_fit(pooled)
        threshold = 0.5 * (centroids[0] + centroids[1])
        return stats.saliency > threshold if centroids[0] != centroids[1] \
            else np.ones((n, h, w), dtype=bool), None
    raise ValueError(f"unknown method {method!r}")


@dataclass
class CalibResult:
    weight_params: list       # per conv layer QuantParams (or None when bypassed)
    act_params: list          # per activation site QuantParams (or None)
    layer_results: list       # per activation site LayerResult


def calibrate_model(model, scenes, cfg, method="inlierq", bypass=False):
    """End-to-end calibration: symmetric min-max weight quantization first,
    then sequential activation range optimization in forward order."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if bypass:
        return CalibResult([None, None], [None, None], [])
    spec = TopKLossSpec(k=cfg.k)
    weight_params = [
        calibrate_symmetric(model.w1, cfg.bits_weights),
        calibrate_symmetric(model.w2, cfg.bits_weights),
    ]
    act_params = [None] * N_ACT_LAYERS
    results = []
    for lid in range(N_ACT_LAYERS):
        stats = collect_statistics(model, scenes, spec, weight_params, act_params)[lid]
        fim = fim_diag(stats.gradients)
        if method == "baseline_minmax":
            masks = np.ones(stats.saliency.shape, dtype=bool)
            base = calibrate_minmax(stats.activations, cfg.bits_acts)
            res = LayerResult(
                layer_id=lid,
                params=base,
                objective=inlier_objective(stats.activations, base, fim, masks),
                candidate_curve=[],
                inlier_mse=_masked_mse(stats.activations, base, masks),
                all_mse=_masked_mse(stats.activations, base, masks),
                inlier_frac=1.0,
                masks=masks,
            )
        else:
            masks, gmm = _layer_masks(method, stats, cfg)
            res = optimize_layer(lid, stats.activations, fim, masks, cfg, mixture=gmm)
        act_params[lid] = res.params
        results.append(res)
    return CalibResult(weight_params, act_params, results)
