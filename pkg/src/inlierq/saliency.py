"""Heatmap top-K negative log-likelihood, its gradient, and volume saliency.

The loss is the mean of -log over the K largest heatmap values in each of
the C channels. Top-K selection is treated as piecewise constant: no
gradient flows through which entries get selected. Heatmap values are
floored into [1e-12, 1 - 1e-12] before the log so the loss stays finite
under extreme quantization.
"""

from dataclasses import dataclass

import numpy as np

from .core import as_tensor

VALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class TopKLossSpec:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def _select_topk(channel, k):
    """Indices of the k largest entries of a flat channel, ties by lower index."""
    return np.argsort(-channel, kind="stable")[:k]


def topk_nll_loss(heatmap, spec):
    """Mean NLL over per-channel top-K entries; returns (loss, selection).

    selection is a list of per-channel flat index arrays recording which
    entries were chosen.
    """
    heatmap = as_tensor(heatmap)
    n_classes = heatmap.shape[0]
    flat = heatmap.reshape(n_classes, -1)
    if spec.k > flat.shape[1]:
        raise ValueError(f"k={spec.k} exceeds {flat.shape[1]} entries per channel")
    selection = []
    total = 0.0
    for c in range(n_classes):
        idx = _select_topk(flat[c], spec.k)
        selection.append(idx)
        vals = np.clip(flat[c][idx], VALUE_FLOOR, 1.0 - VALUE_FLOOR)
        total += float(np.sum(np.log(vals)))
    loss = -total / (spec.k * n_classes)
    return loss, selection


def loss_gradient(heatmap, spec):
    """d(loss)/d(heatmap): -1/(K*C*value) at selected entries, 0 elsewhere."""
    heatmap = as_tensor(heatmap)
    n_classes = heatmap.shape[0]
    flat = heatmap.reshape(n_classes, -1)
    grad = np.zeros_like(flat)
    for c in range(n_classes):
        idx = _select_topk(flat[c], spec.k)
        vals = np.clip(flat[c][idx], VALUE_FLOOR, 1.0 - VALUE_FLOOR)
        grad[c, idx] = -1.0 / (spec.k * n_classes * vals)
    return grad.reshape(heatmap.shape)


@dataclass(frozen=True)
class SaliencyField:
    scores: np.ndarray  # (H, W), non-negative
    layer_id: int


def volume_saliency(gtrace, layer_id):
    """Per-cell L1 norm of the activation gradient across channels."""
    grads = gtrace.gradients
    if not 0 <= layer_id < len(grads):
        raise ValueError(f"layer_id {layer_id} out of range for {len(grads)} layers")
    g = grads[layer_id]
    return SaliencyField(scores=np.sum(np.abs(g), axis=0), layer_id=layer_id)
