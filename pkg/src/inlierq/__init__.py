"""Inlier-centric post-training quantization on a seeded toy detection
benchmark: affine quantizer, synthetic heatmap detector, saliency-driven
inlier masks, Fisher-weighted range calibration, and a report runner."""

__version__ = "0.1.0"

from .calibrate import CalibConfig, CalibResult, calibrate_model  # noqa: F401
from .detector import SceneConfig, forward, generate_scene, make_model  # noqa: F401
from .quantizer import QuantParams, calibrate_minmax, fake_quantize  # noqa: F401
from .report import ExperimentConfig, emit_reports, run_experiment  # noqa: F401
