"""Experiment runner and report emission.

Builds the seeded benchmark (model + disjoint calibration/evaluation scene
sets), runs one calibration per (method, sweep point), evaluates quantized
accuracy on the held-out scenes, and writes a long-format `results.csv`
(one row per method x sweep point x layer) plus a nested `results.json`
and plot-ready per-sweep CSVs.
"""

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .calibrate import METHODS, CalibConfig, calibrate_model
from .core import SeededRng, moments
from .detector import (
    N_ACT_LAYERS,
    SceneConfig,
    forward,
    forward_quantized,
    generate_scene,
    make_model,
)
from .saliency import TopKLossSpec, topk_nll_loss

CSV_HEADER = ("exp_id,method,bits_w,bits_a,tau,k,layer,layer_mse,rel_err,"
              "skew_all,skew_inlier,inlier_frac,nll_proxy,peak_hit,failed,reason")

FORMATS = ("csv", "json", "both")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    model_seed: int = 42
    scene: SceneConfig = field(default_factory=SceneConfig)
    calib: CalibConfig = field(default_factory=CalibConfig)
    n_eval: int = 32
    eval_seed_offset: int = 100000
    tau_sweep: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    k_sweep: tuple = (4, 8, 16, 40)
    bits_sweep: tuple = ((4, 4),)
    methods: tuple = METHODS
    out_dir: str = "reports"
    format: str = "both"

    def __post_init__(self):
        if self.n_eval < 1:
            raise ConfigError("n_eval: must be >= 1")
        if self.format not in FORMATS:
            raise ConfigError(f"format: must be one of {FORMATS}, got {self.format!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r}")
        # calibration scenes use stream offsets [0, n_calib); evaluation
        # scenes start at eval_seed_offset -- the two sets must not overlap
        if self.eval_seed_offset < self.calib.n_calib:
            raise ConfigError(
                "eval_seed_offset: evaluation scene seeds overlap the "
                f"calibration range [0, {self.calib.n_calib})")


def load_config(path=None, overrides=None):
    """Build an ExperimentConfig from an optional JSON file plus overrides.

    Every field is defaulted; unknown keys raise ConfigError with the
    dotted field path.
    """
    raw = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"<file>: not valid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise ConfigError("<file>: top level must be a JSON object")
    if overrides:
        raw = {**raw, **overrides}
    return _build_config(raw)


def _build_dataclass(cls, raw, prefix):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in raw.items():
        if key not in fields:
            raise ConfigError(f"{prefix}{key}: unknown field")
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix.rstrip('.') or '<root>'}: {e}") from e


def _build_config(raw):
    raw = dict(raw)
    scene_raw = raw.pop("scene", {})
    calib_raw = raw.pop("calib", {})
    if not isinstance(scene_raw, dict):
        raise ConfigError("scene: must be an object")
    if not isinstance(calib_raw, dict):
        raise ConfigError("calib: must be an object")
    scene = _build_dataclass(SceneConfig, scene_raw, "scene.")
    calib = _build_dataclass(CalibConfig, calib_raw, "calib.")
    for key in ("tau_sweep", "k_sweep", "methods"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    if "bits_sweep" in raw and isinstance(raw["bits_sweep"], list):
        raw["bits_sweep"] = tuple(tuple(b) for b in raw["bits_sweep"])
    return _build_dataclass(
        ExperimentConfig, {**raw, "scene": scene, "calib": calib}, "")


@dataclass
class ReportRow:
    exp_id: str
    method: str
    bits_w: int
    bits_a: int
    tau: float
    k: int
    layer: int
    layer_mse: float = None
    rel_err: float = None
    skew_all: float = None
    skew_inlier: float = None
    inlier_frac: float = None
    nll_proxy: float = None
    peak_hit: float = None
    failed: bool = False
    reason: str = ""
    wall_time: float = 0.0


def _benchmark(config):
    """Model + calibration and held-out evaluation scene sets."""
    model = make_model(
        c_in=config.scene.c_in,
        n_classes=config.scene.n_classes,
        seed=config.model_seed,
        bg_noise_amp=config.scene.noise_amp,
    )
    rng = SeededRng(config.calib.seed)
    calib_scenes = [generate_scene(config.scene, rng.spawn(i))
                    for i in range(config.calib.n_calib)]
    eval_scenes = [generate_scene(config.scene, rng.spawn(config.eval_seed_offset + i))
                   for i in range(config.n_eval)]
    return model, calib_scenes, eval_scenes


def error_accumulation(model, eval_scenes, weight_params, act_params):
    """Per-layer relative L2 error of quantized vs full-precision
    activations along the forward pass, averaged over scenes."""
    rel = np.zeros(N_ACT_LAYERS)
    mse = np.zeros(N_ACT_LAYERS)
    for scene in eval_scenes:
        _, tr_fp = forward(model, scene)
        _, tr_q = forward_quantized(model, scene, weight_params, act_params)
        for lid in range(N_ACT_LAYERS):
            x, xq = tr_fp.activations[lid], tr_q.activations[lid]
            rel[lid] += np.linalg.norm(xq - x) / (np.linalg.norm(x) + 1e-12)
            mse[lid] += np.mean((xq - x) ** 2)
    n = len(eval_scenes)
    return rel / n, mse / n


def peak_hit_rate(heatmap, scene):
    """Fraction of ground-truth object centers within Chebyshev distance 1
    of the heatmap's top-n_obj class-agnostic peaks.

    Peaks are 3x3 local maxima of the channel-max map (the usual heatmap
    keypoint extraction), ranked by value.
    """
    strength = heatmap.max(axis=0)
    n_obj = len(scene.object_centers)
    padded = np.pad(strength, 1, constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    local_max = strength >= win.max(axis=(2, 3))
    masked = np.where(local_max, strength, -np.inf)
    flat = np.argsort(-masked.ravel(), kind="stable")[:n_obj]
    peaks = [divmod(int(i), strength.shape[1]) for i in flat]
    hits = 0
    for (r, c, _cls) in scene.object_centers:
        if any(max(abs(r - pr), abs(c - pc)) <= 1 for pr, pc in peaks):
            hits += 1
    return hits / n_obj if n_obj else 0.0


def evaluate(model, eval_scenes, weight_params, act_params, eval_k):
    """Held-out NLL proxy and peak-hit rate for one calibrated model.

    The NLL proxy is evaluated at the full-precision model's own top-K
    selections so that the metric measures value degradation at a fixed
    set of entries rather than re-selection luck under coarse rounding.
    """
    spec = TopKLossSpec(k=eval_k)
    nll_total = 0.0
    hit_total = 0.0
    for scene in eval_scenes:
        h_fp, _ = forward(model, scene)
        _, selection = topk_nll_loss(h_fp, spec)
        h_q, _ = forward_quantized(model, scene, weight_params, act_params)
        flat = h_q.reshape(h_q.shape[0], -1)
        vals = np.concatenate([
            np.clip(flat[c][idx], 1e-12, 1.0 - 1e-12)
            for c, idx in enumerate(selection)
        ])
        nll_total += -float(np.mean(np.log(vals)))
        hit_total += peak_hit_rate(h_q, scene)
    n = len(eval_scenes)
    return nll_total / n, hit_total / n


def _point_rows(exp_id, method, ccfg, config, model, calib_scenes, eval_scenes):
    """Calibrate one (method, config) point and expand it to per-layer rows."""
    base = dict(exp_id=exp_id, method=method, bits_w=ccfg.bits_weights,
                bits_a=ccfg.bits_acts, tau=ccfg.tau, k=ccfg.k)
    t0 = time.perf_counter()
    try:
        result = calibrate_model(model, calib_scenes, ccfg, method)
        rel, mse = error_accumulation(
            model, eval_scenes, result.weight_params, result.act_params)
        nll, hit = evaluate(model, eval_scenes, result.weight_params,
                            result.act_params, eval_k=config.scene.n_obj)
    except (ValueError, FloatingPointError) as e:
        wall = time.perf_counter() - t0
        return [ReportRow(**base, layer=lid, failed=True, reason=str(e),
                          wall_time=wall)
                for lid in range(N_ACT_LAYERS)]
    wall = time.perf_counter() - t0
    rows = []
    for lid in range(N_ACT_LAYERS):
        lres = result.layer_results[lid]
        skew_all, skew_inlier = _layer_skews(model, calib_scenes, result, lid, lres)
        rows.append(ReportRow(
            **base, layer=lid,
            layer_mse=float(mse[lid]),
            rel_err=float(rel[lid]),
            skew_all=skew_all,
            skew_inlier=skew_inlier,
            inlier_frac=lres.inlier_frac,
            nll_proxy=nll,
            peak_hit=hit,
            wall_time=wall,
        ))
    return rows


def _layer_skews(model, calib_scenes, result, lid, lres):
    """Skewness of the full-precision activation distribution at one layer,
    over all volumes and restricted to the calibration-time inlier set."""
    acts = []
    for scene in calib_scenes:
        _, tr = forward(model, scene)
        acts.append(tr.activations[lid])
    acts = np.stack(acts)
    _, _, skew_all = moments(acts)
    masks = lres.masks
    if masks is None or not np.any(masks):
        return skew_all, skew_all
    sel = np.broadcast_to(np.asarray(masks, bool)[:, None, :, :], acts.shape)
    _, _, skew_inlier = moments(acts[sel])
    return skew_all, skew_inlier


def run_experiment(config, sweep="point"):
    """Run the configured experiment and return rows in deterministic order.

    sweep: "point" (one row set per method at the base config), "tau"
    (inlier methods swept over tau_sweep), or "k" (swept over k_sweep).
    """
    if sweep not in ("point", "tau", "k"):
        raise ConfigError(f"sweep: must be point, tau or k, got {sweep!r}")
    model, calib_scenes, eval_scenes = _benchmark(config)
    points = []   # (method, CalibConfig)
    for bits_w, bits_a in config.bits_sweep:
        for method in config.methods:
            base = dataclasses.replace(
                config.calib, bits_weights=bits_w, bits_acts=bits_a)
            if sweep == "point":
                points.append((method, base))
            elif sweep == "tau":
                for tau in config.tau_sweep:
                    points.append((method, dataclasses.replace(base, tau=tau)))
            else:
                for k in config.k_sweep:
                    points.append((method, dataclasses.replace(base, k=k)))
    points.sort(key=lambda p: (p[0], p[1].bits_weights, p[1].bits_acts,
                               p[1].tau, p[1].k))
    rows = []
    for i, (method, ccfg) in enumerate(points):
        exp_id = (f"{method}_w{ccfg.bits_weights}a{ccfg.bits_acts}"
                  f"_tau{_fmt(ccfg.tau)}_k{ccfg.k}")
        rows.extend(_point_rows(exp_id, method, ccfg, config,
                                model, calib_scenes, eval_scenes))
    return rows


def _fmt(value):
    """Deterministic text form: shortest round-trip repr for floats."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_line(row):
    cells = [row.exp_id, row.method, _fmt(row.bits_w), _fmt(row.bits_a),
             _fmt(row.tau), _fmt(row.k), _fmt(row.layer)]
    numerics = [row.layer_mse, row.rel_err, row.skew_all, row.skew_inlier,
                row.inlier_frac, row.nll_proxy, row.peak_hit]
    if row.failed:
        cells += [""] * len(numerics) + ["true", row.reason.replace(",", ";")]
    else:
        cells += [_fmt(v) for v in numerics] + ["false", ""]
    return ",".join(cells)


def emit_reports(rows, out_dir, fmt="both", sweep=None):
    """Write results.csv / results.json (and a long-format sweep CSV)."""
    if fmt not in FORMATS:
        raise ConfigError(f"format: must be one of {FORMATS}, got {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = os.path.join(out_dir, "results.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(CSV_HEADER + "\n")
            for row in rows:
                f.write(_csv_line(row) + "\n")
        written.append(path)
        if sweep in ("tau", "k"):
            spath = os.path.join(out_dir, f"sweep_{sweep}.csv")
            key = "tau" if sweep == "tau" else "k"
            with open(spath, "w", encoding="utf-8", newline="\n") as f:
                f.write(f"method,{key},layer,nll_proxy,peak_hit,inlier_frac\n")
                for row in rows:
                    f.write(",".join([
                        row.method, _fmt(getattr(row, key)), _fmt(row.layer),
                        _fmt(row.nll_proxy), _fmt(row.peak_hit),
                        _fmt(row.inlier_frac)]) + "\n")
            written.append(spath)
    if fmt in ("json", "both"):
        path = os.path.join(out_dir, "results.json")
        payload = {"rows": [dataclasses.asdict(row) for row in rows]}
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        written.append(path)
    return written
