"""Threshold and top-K sweeps through the experiment runner.

Uses the same machinery as the `inlierq sweep-tau` / `inlierq sweep-k`
command-line verbs and prints the long-format rows. The directional
expectations: the proxy metric should not degrade as tau rises, and a K
matched to the true object count should beat a much larger K (which drags
task-irrelevant background into the calibration loss).
"""

import dataclasses

from inlierq.report import ExperimentConfig, run_experiment

config = ExperimentConfig(methods=("inlierq",),
                          tau_sweep=(0.1, 0.3, 0.5, 0.7, 0.9),
                          k_sweep=(2, 4, 8, 16, 40))

print("=== tau sweep (posterior threshold) ===")
for row in run_experiment(config, "tau"):
    if row.layer == 0:
        print(f"tau={row.tau}: nll={row.nll_proxy:.4f} "
              f"peak_hit={row.peak_hit:.3f} inlier_frac={row.inlier_frac:.3f}")

print("\n=== K sweep (top-K loss width; scene has 4 objects) ===")
for row in run_experiment(config, "k"):
    if row.layer == 0:
        print(f"K={row.k:>2d}: nll={row.nll_proxy:.4f} "
              f"peak_hit={row.peak_hit:.3f} inlier_frac={row.inlier_frac:.3f}")
