"""Synthetic scenes and a tiny two-layer heatmap detector.

Architecture: conv(3x3, same) -> ReLU -> conv(3x3, same) -> sigmoid, stride 1,
so every layer keeps the (H, W) grid. Two activation sites are traced and
quantized: the conv1 pre-activation and the ReLU output feeding conv2.

Both forward and backward are analytic; the ReLU subgradient at exactly 0
is taken as 0. Fake quantization is treated as identity in the backward
pass (straight-through).
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import SeededRng, as_tensor
from .quantizer import fake_quantize

N_ACT_LAYERS = 2  # conv1 pre-activation, ReLU output


@dataclass(frozen=True)
class SceneConfig:
    height: int = 20
    width: int = 20
    c_in: int = 1
    n_obj: int = 4
    n_anom: int = 3
    n_classes: int = 2
    noise_amp: float = 0.05
    obj_intensity: float = 1.0
    intensity_jitter: float = 0.4  # per-object intensity in obj_intensity * [1-j, 1+j]
    blob_sigma: float = 1.2
    anomaly_mult: float = 5.0
    min_separation: int = 4  # Chebyshev distance between placed centers/cells
    border_margin: int = 2   # keep placements away from the zero-padded border


@dataclass(frozen=True)
class Scene:
    grid: np.ndarray                # (c_in, H, W)
    object_centers: tuple           # ((row, col, class), ...)
    anomaly_cells: tuple            # ((row, col), ...)
    seed: int


def generate_scene(cfg, rng):
    """Background noise + Gaussian object blobs + high-intensity anomaly speckle."""
    h, w = cfg.height, cfg.width
    n_cells = h * w
    if cfg.n_obj + cfg.n_anom > n_cells:
        raise ValueError(f"{cfg.n_obj} objects + {cfg.n_anom} anomalies exceed {n_cells} cells")
    # objects become isolated heatmap peaks, and anomaly clutter never
    # overlaps an object's receptive field, by keeping every placed cell
    # at least min_separation away from the rest
    order = rng.permutation(n_cells)
    placed = []
    for c in order:
        if len(placed) == cfg.n_obj + cfg.n_anom:
            break
        r, q = int(c) // w, int(c) % w
        m = cfg.border_margin
        if not (m <= r < h - m and m <= q < w - m):
            continue
        if all(max(abs(r - pr), abs(q - pc)) >= cfg.min_separation for pr, pc in placed):
            placed.append((r, q))
    if len(placed) < cfg.n_obj + cfg.n_anom:
        raise ValueError(
            f"could not place {cfg.n_obj} objects + {cfg.n_anom} anomalies "
            f"at separation {cfg.min_separation} on a {h}x{w} grid"
        )
    centers, anomalies = placed[: cfg.n_obj], placed[cfg.n_obj:]
    classes = rng.integers(0, cfg.n_classes, cfg.n_obj) if cfg.n_obj else np.empty(0, int)

    grid = cfg.noise_amp * rng.uniform(0.0, 1.0, (cfg.c_in, h, w)) if cfg.noise_amp > 0 \
        else np.zeros((cfg.c_in, h, w))
    j = cfg.intensity_jitter
    amps = cfg.obj_intensity * rng.uniform(1.0 - j, 1.0 + j, cfg.n_obj)
    rr, cc = np.mgrid[0:h, 0:w]
    for (r, c), amp in zip(centers, amps):
        blob = amp * np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / (2 * cfg.blob_sigma ** 2))
        grid += blob[None, :, :]
    for r, c in anomalies:
        grid[:, r, c] += cfg.anomaly_mult * cfg.obj_intensity
    return Scene(
        grid=grid,
        object_centers=tuple((r, c, int(k)) for (r, c), k in zip(centers, classes)),
        anomaly_cells=tuple(anomalies),
        seed=rng.seed,
    )


@dataclass(frozen=True)
class DetectorModel:
    w1: np.ndarray  # (c_mid, c_in, 3, 3)
    b1: np.ndarray  # (c_mid,)
    w2: np.ndarray  # (n_classes, c_mid, 3, 3)
    b2: np.ndarray  # (n_classes,)


def _blob_template(sigma=0.8):
    d = np.arange(-1, 2, dtype=float)
    t = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma ** 2))
    return t / t.sum()


def make_model(c_in=1, c_mid=4, n_classes=2, seed=0, noise=0.03, bg_noise_amp=0.05):
    """Seeded detector whose heatmap peaks at object blobs, not speckle.

    The first half of the mid channels are blob matchers (smoothing
    kernels); the second half are speckle detectors (sharp center,
    negative surround) that conv2 weights negatively, so single-cell
    anomalies produce large mid-layer activations but a suppressed
    heatmap. No training happens anywhere.
    """
    rng = SeededRng(seed)
    tpl = _blob_template()
    # surround weight cancels a blob's 3x3 mass, so the speckle channels
    # stay near zero on objects while passing single-cell clutter intact
    spike = -0.2 * np.ones((3, 3))
    spike[1, 1] = 1.0
    n_match = max(1, c_mid // 2)

    w1 = noise * rng.normal(size=(c_mid, c_in, 3, 3))
    for m in range(c_mid):
        w1[m, 0] += 2.0 * tpl if m < n_match else spike
    b1 = 0.1 * noise * rng.normal(size=c_mid)
    # speckle channels carry a negative threshold so they are exactly zero
    # on background and objects after the ReLU, and only fire on clutter
    b1[n_match:] -= 0.3

    w2 = noise * rng.normal(size=(n_classes, c_mid, 3, 3))
    n_spk = c_mid - n_match
    for c in range(n_classes):
        for m in range(c_mid):
            # speckle channels weigh in negatively over the whole 3x3 so the
            # suppression covers the clutter cell and its bright ring
            w2[c, m] += (1.8 / n_match) * tpl if m < n_match else -(1.0 / n_spk) * np.ones((3, 3))
    b2 = -2.0 + 0.1 * noise * rng.normal(size=n_classes)

    # center the bias on the expected background drive, so a scene with no
    # objects sits at heatmap sigmoid(-2): quantization that flushes the
    # background to zero then shifts the heatmap instead of "denoising" it
    model = DetectorModel(w1=w1, b1=b1, w2=w2, b2=b2)
    if bg_noise_amp > 0:
        flat = bg_noise_amp * rng.spawn(1).uniform(0.0, 1.0, (c_in, 32, 32))
        pre1 = conv2d_same(flat, w1, b1)
        pre2 = conv2d_same(np.maximum(pre1, 0.0), w2, np.zeros(n_classes))
        bg_drive = np.mean(pre2[:, 4:-4, 4:-4], axis=(1, 2))
        model = DetectorModel(w1=w1, b1=b1, w2=w2, b2=b2 - bg_drive)
    return model


@dataclass(frozen=True)
class ActivationTrace:
    pre1: np.ndarray      # conv1 output before ReLU (as propagated)
    act1: np.ndarray      # ReLU output feeding conv2 (as propagated)
    heatmap: np.ndarray   # (n_classes, H, W), sigmoid output
    w2_eff: np.ndarray    # conv2 weights actually used (fake-quantized or not)

    @property
    def activations(self):
        return (self.pre1, self.act1)


@dataclass(frozen=True)
class GradientTrace:
    g_pre1: np.ndarray
    g_act1: np.ndarray

    @property
    def gradients(self):
        return (self.g_pre1, self.g_act1)


def conv2d_same(x, w, b):
    """3x3 same-padded correlation: x (Cin,H,W), w (Cout,Cin,3,3) -> (Cout,H,W)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.einsum("oikl,ihwkl->ohw", w, win, optimize=True) + b[:, None, None]


def conv2d_input_grad(dy, w):
    """Gradient of conv2d_same w.r.t. its input: correlate dy with flipped kernels."""
    dyp = np.pad(dy, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(dyp, (3, 3), axis=(1, 2))
    return np.einsum("oikl,ohwkl->ihw", w[:, :, ::-1, ::-1], win, optimize=True)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward(model, scene):
    pre1 = conv2d_same(scene.grid, model.w1, model.b1)
    act1 = np.maximum(pre1, 0.0)
    heatmap = _sigmoid(conv2d_same(act1, model.w2, model.b2))
    trace = ActivationTrace(pre1=pre1, act1=act1, heatmap=heatmap, w2_eff=model.w2)
    return heatmap, trace


def forward_quantized(model, scene, weight_params, act_params):
    """Forward with weights fake-quantized once and each traced activation
    passed through quantize/dequantize before the next layer.

    weight_params and act_params are length-2 sequences of QuantParams;
    a None entry bypasses quantization at that site.
    """
    wp = list(weight_params) if weight_params is not None else [None, None]
    ap = list(act_params) if act_params is not None else [None, None]
    if len(wp) != 2 or len(ap) != 2:
        raise ValueError("expected 2 weight and 2 activation param slots")
    w1 = fake_quantize(model.w1, wp[0]) if wp[0] is not None else model.w1
    w2 = fake_quantize(model.w2, wp[1]) if wp[1] is not None else model.w2

    pre1 = conv2d_same(scene.grid, w1, model.b1)
    if ap[0] is not None:
        pre1 = fake_quantize(pre1, ap[0])
    act1 = np.maximum(pre1, 0.0)
    if ap[1] is not None:
        act1 = fake_quantize(act1, ap[1])
    heatmap = _sigmoid(conv2d_same(act1, w2, model.b2))
    trace = ActivationTrace(pre1=pre1, act1=act1, heatmap=heatmap, w2_eff=w2)
    return heatmap, trace


def backward_heatmap(model, trace, d_heatmap):
    """Analytic gradients of a scalar loss w.r.t. the traced activations,
    given the loss gradient at the heatmap."""
    d_heatmap = as_tensor(d_heatmap)
    if d_heatmap.shape != trace.heatmap.shape:
        raise ValueError(f"gradient shape {d_heatmap.shape} != heatmap shape {trace.heatmap.shape}")
    h = trace.heatmap
    d_pre2 = d_heatmap * h * (1.0 - h)
    g_act1 = conv2d_input_grad(d_pre2, trace.w2_eff)
    g_pre1 = g_act1 * (trace.pre1 > 0)
    return GradientTrace(g_pre1=g_pre1, g_act1=g_act1)
