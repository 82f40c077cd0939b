"""Command-line front end for the calibration benchmark.

Verbs:
  calibrate   run the inlier-restricted calibration at the configured point
  sweep-tau   sweep the posterior threshold and report per-point metrics
  sweep-k     sweep the top-K loss width
  compare     run every configured method at the base point
  selftest    quick invariant battery (quantizer, EM, gradients)

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

import argparse
import dataclasses
import sys

import numpy as np

from .core import SeededRng
from .detector import SceneConfig, backward_heatmap, forward, generate_scene, make_model
from .mixture import em_fit, posterior
from .quantizer import calibrate_minmax, dequantize, quantize
from .report import ConfigError, emit_reports, load_config, run_experiment
from .saliency import TopKLossSpec, loss_gradient


def _parser():
    p = argparse.ArgumentParser(
        prog="inlierq",
        description="Inlier-restricted post-training quantization benchmark.")
    p.add_argument("command",
                   choices=["calibrate", "sweep-tau", "sweep-k", "compare",
                            "selftest"])
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the calibration stream seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--format", default=None, choices=["csv", "json", "both"])
    return p


def _selftest():
    """Cheap end-to-end invariant checks; returns a list of failure strings."""
    failures = []
    rng = SeededRng(0)

    x = rng.uniform(-3.0, 3.0, 4096)
    params = calibrate_minmax(x, 4)
    err = np.max(np.abs(dequantize(quantize(x, params)) - x))
    if err > params.scale / 2 + 1e-12:
        failures.append(f"quantizer roundtrip error {err} > scale/2")

    data = np.concatenate([rng.normal(0.0, 1.0, 500), rng.normal(10.0, 1.0, 500)])
    model, history = em_fit(data)
    if any(b - a < -1e-9 for a, b in zip(history, history[1:])):
        failures.append("EM log-likelihood decreased")
    if abs(model.mean_inlier - 10.0) > 0.2 or abs(model.mean_anomaly) > 0.2:
        failures.append("EM means off on the separable mixture")
    post = posterior(model, data)
    log_i = (np.log(model.prior_inlier)
             - 0.5 * np.log(2.0 * np.pi * model.var_inlier)
             - (data - model.mean_inlier) ** 2 / (2.0 * model.var_inlier))
    log_a = (np.log(model.prior_anomaly)
             - 0.5 * np.log(2.0 * np.pi * model.var_anomaly)
             - (data - model.mean_anomaly) ** 2 / (2.0 * model.var_anomaly))
    comp = 1.0 / (1.0 + np.exp(log_i - log_a))
    if np.max(np.abs(post + comp - 1.0)) > 1e-9:
        failures.append("posterior complement does not sum to 1")

    det = make_model(seed=0)
    scene = generate_scene(SceneConfig(), rng.spawn(1))
    heatmap, trace = forward(det, scene)
    grad = loss_gradient(heatmap, TopKLossSpec(k=4))
    gtrace = backward_heatmap(det, trace, grad)
    if not all(np.all(np.isfinite(g)) for g in gtrace.gradients):
        failures.append("non-finite activation gradients")
    return failures


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        failures = _selftest()
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        if not failures:
            print("selftest: all checks passed")
        return 2 if failures else 0

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = dataclasses.replace(
                config, calib=dataclasses.replace(config.calib, seed=args.seed))
        if args.out is not None:
            config = dataclasses.replace(config, out_dir=args.out)
        if args.format is not None:
            config = dataclasses.replace(config, format=args.format)
        if args.command == "calibrate":
            config = dataclasses.replace(config, methods=("inlierq",))
        elif args.command == "sweep-tau":
            # only the mixture-posterior method responds to tau
            kept = tuple(m for m in config.methods if m == "inlierq")
            config = dataclasses.replace(config, methods=kept or ("inlierq",))
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    sweep = {"calibrate": "point", "compare": "point",
             "sweep-tau": "tau", "sweep-k": "k"}[args.command]
    try:
        rows = run_experiment(config, sweep)
        written = emit_reports(rows, config.out_dir, config.format,
                               sweep=sweep if sweep != "point" else None)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError, OSError) as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 2
    if any(r.failed for r in rows):
        print("one or more calibration points failed; see the failed/reason "
              "columns", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
