import numpy as np
import pytest

from inlierq.core import SeededRng
from inlierq.detector import (
    SceneConfig,
    backward_heatmap,
    conv2d_input_grad,
    conv2d_same,
    forward,
    forward_quantized,
    generate_scene,
    make_model,
)
from inlierq.quantizer import calibrate_minmax, calibrate_symmetric, fake_quantize
from inlierq.saliency import TopKLossSpec, loss_gradient, topk_nll_loss


def naive_conv2d_same(x, w, b):
    """Reference convolution: explicit loops, zero padding."""
    c_out, c_in, kh, kw = w.shape
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for r in range(h):
            for c in range(wd):
                acc = 0.0
                for i in range(c_in):
                    for dr in range(kh):
                        for dc in range(kw):
                            acc += w[o, i, dr, dc] * xp[i, r + dr, c + dc]
                out[o, r, c] = acc + b[o]
    return out


def test_conv2d_same_matches_naive_oracle():
    rng = SeededRng(11)
    x = rng.normal(size=(2, 7, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    np.testing.assert_allclose(conv2d_same(x, w, b), naive_conv2d_same(x, w, b),
                               atol=1e-12)


def test_conv2d_input_grad_is_adjoint():
    # <conv(x), y> == <x, conv_grad(y)> defines the correct transpose
    rng = SeededRng(12)
    x = rng.normal(size=(2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    y = rng.normal(size=(3, 6, 6))
    lhs = np.sum(conv2d_same(x, w, np.zeros(3)) * y)
    rhs = np.sum(x * conv2d_input_grad(y, w))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_scene_deterministic():
    cfg = SceneConfig()
    a = generate_scene(cfg, SeededRng(0).spawn(4))
    b = generate_scene(cfg, SeededRng(0).spawn(4))
    np.testing.assert_array_equal(a.grid, b.grid)
    assert a.object_centers == b.object_centers
    assert a.anomaly_cells == b.anomaly_cells


def test_scene_placement_constraints():
    cfg = SceneConfig()
    rng = SeededRng(9)
    for i in range(20):
        s = generate_scene(cfg, rng.spawn(i))
        cells = [(r, c) for (r, c, _k) in s.object_centers] + list(s.anomaly_cells)
        assert len(s.object_centers) == cfg.n_obj
        assert len(s.anomaly_cells) == cfg.n_anom
        for r, c in cells:
            assert cfg.border_margin <= r < cfg.height - cfg.border_margin
            assert cfg.border_margin <= c < cfg.width - cfg.border_margin
        for i1 in range(len(cells)):
            for i2 in range(i1 + 1, len(cells)):
                d = max(abs(cells[i1][0] - cells[i2][0]),
                        abs(cells[i1][1] - cells[i2][1]))
                assert d >= cfg.min_separation


def test_scene_capacity_error():
    cfg = SceneConfig(height=6, width=6, n_obj=30, n_anom=30)
    with pytest.raises(ValueError):
        generate_scene(cfg, SeededRng(0))


def test_anomaly_cells_are_bright():
    cfg = SceneConfig()
    s = generate_scene(cfg, SeededRng(5))
    background = np.median(s.grid[0])
    for r, c in s.anomaly_cells:
        assert s.grid[0, r, c] > background + cfg.anomaly_mult * 0.5


def test_make_model_deterministic_and_shapes():
    m1, m2 = make_model(seed=3), make_model(seed=3)
    np.testing.assert_array_equal(m1.w1, m2.w1)
    np.testing.assert_array_equal(m1.w2, m2.w2)
    assert m1.w1.shape == (4, 1, 3, 3)
    assert m1.w2.shape == (2, 4, 3, 3)


def test_forward_heatmap_in_unit_interval():
    model = make_model(seed=1)
    scene = generate_scene(SceneConfig(), SeededRng(2))
    heatmap, trace = forward(model, scene)
    assert heatmap.shape == (2, 20, 20)
    assert np.all((heatmap > 0) & (heatmap < 1))
    assert np.all(trace.act1 >= 0)


def test_forward_quantized_none_means_bypass():
    model = make_model(seed=1)
    scene = generate_scene(SceneConfig(), SeededRng(2))
    h_fp, _ = forward(model, scene)
    h_q, _ = forward_quantized(model, scene, None, None)
    np.testing.assert_array_equal(h_q, h_fp)
    h_q2, _ = forward_quantized(model, scene, [None, None], [None, None])
    np.testing.assert_array_equal(h_q2, h_fp)


def test_forward_quantized_weight_fake_quant_matches_manual():
    model = make_model(seed=1)
    scene = generate_scene(SceneConfig(), SeededRng(2))
    wp = [calibrate_symmetric(model.w1, 4), calibrate_symmetric(model.w2, 4)]
    _, trace = forward_quantized(model, scene, wp, None)
    w1q = fake_quantize(model.w1, wp[0])
    manual = conv2d_same(scene.grid, w1q, model.b1)
    np.testing.assert_allclose(trace.pre1, manual, atol=1e-12)


def test_forward_quantized_activation_values_on_grid():
    model = make_model(seed=1)
    scene = generate_scene(SceneConfig(), SeededRng(2))
    _, tr_fp = forward(model, scene)
    ap = [calibrate_minmax(tr_fp.pre1, 4), calibrate_minmax(tr_fp.act1, 4)]
    _, tr_q = forward_quantized(model, scene, None, ap)
    # recorded pre1 is the dequantized value: quantizing again is a no-op
    np.testing.assert_array_equal(fake_quantize(tr_q.pre1, ap[0]), tr_q.pre1)


def _fd_heatmap_gradient(model, scene, spec, layer, idx, step=1e-5):
    """Central finite difference of the top-K NLL w.r.t. one traced
    activation entry, holding the top-K selection fixed at the base point."""
    _, trace = forward(model, scene)
    base_heat = trace.heatmap
    _, selection = topk_nll_loss(base_heat, spec)

    def loss_at(delta):
        pre1 = trace.pre1.copy()
        act1 = np.maximum(pre1, 0.0)
        if layer == 0:
            pre1.ravel()[idx] += delta
            act1 = np.maximum(pre1, 0.0)
        else:
            act1 = act1.copy()
            act1.ravel()[idx] += delta
        z = conv2d_same(act1, model.w2, model.b2)
        heat = 1.0 / (1.0 + np.exp(-z))
        flat = heat.reshape(heat.shape[0], -1)
        vals = np.concatenate([
            np.clip(flat[c][sel], 1e-12, 1 - 1e-12)
            for c, sel in enumerate(selection)])
        return -np.mean(np.log(vals))

    return (loss_at(step) - loss_at(-step)) / (2 * step)


def test_activation_gradients_match_finite_differences():
    cfg = SceneConfig(height=12, width=12, n_obj=2, n_anom=1)
    spec = TopKLossSpec(k=2)
    max_rel = 0.0
    for mseed in range(10):
        model = make_model(seed=mseed)
        rng = SeededRng(100 + mseed)
        for si in range(3):
            scene = generate_scene(cfg, rng.spawn(si))
            heat, trace = forward(model, scene)
            grad = loss_gradient(heat, spec)
            gtrace = backward_heatmap(model, trace, grad)
            for layer, g in enumerate(gtrace.gradients):
                flat = g.ravel()
                order = np.argsort(-np.abs(flat))[:5]
                for idx in order:
                    if layer == 0 and abs(trace.pre1.ravel()[idx]) < 1e-3:
                        continue  # ReLU kink: FD invalid there
                    fd = _fd_heatmap_gradient(model, scene, spec, layer, idx)
                    if abs(fd) < 1e-12:
                        continue
                    max_rel = max(max_rel, abs(flat[idx] - fd) / abs(fd))
    assert max_rel < 1e-5
