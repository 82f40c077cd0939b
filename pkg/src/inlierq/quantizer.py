"""Uniform affine quantization: x_q = clamp(round(x/s) + z, l, u).

Rounding ties go to even (numpy's default), which is bias-free. Two
calibration conventions:
  * activations: unsigned asymmetric, l = 0, u = 2^b - 1
  * weights: symmetric signed, z = 0, l = -2^(b-1), u = 2^(b-1) - 1
"""

from dataclasses import dataclass

import numpy as np

from .core import as_tensor


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    bits: int
    code_low: int
    code_high: int

    def __post_init__(self):
        if not (2 <= self.bits <= 8):
            raise ValueError(f"bits must be in [2, 8], got {self.bits}")
        if self.code_high - self.code_low + 1 != 2 ** self.bits:
            raise ValueError("code range must span exactly 2^bits levels")
        if not (self.code_low <= self.zero_point <= self.code_high):
            raise ValueError("zero_point outside code range")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @property
    def range_low(self):
        return self.scale * (self.code_low - self.zero_point)

    @property
    def range_high(self):
        return self.scale * (self.code_high - self.zero_point)


@dataclass(frozen=True)
class QuantizedTensor:
    codes: np.ndarray
    params: QuantParams


def quantize(x, p):
    x = as_tensor(x)
    codes = np.clip(np.round(x / p.scale) + p.zero_point, p.code_low, p.code_high)
    return QuantizedTensor(codes.astype(np.int64), p)


def dequantize(q):
    return q.params.scale * (q.codes.astype(np.float64) - q.params.zero_point)


def fake_quantize(x, p):
    """Quantize-then-dequantize in real arithmetic."""
    return dequantize(quantize(x, p))


def _unsigned_params(lo, hi, bits):
    l, u = 0, 2 ** bits - 1
    if hi == lo:
        # degenerate constant range: unit scale, zero-point makes the
        # constant exactly representable (up to clamping)
        s = 1.0
        z = int(np.clip(np.round(-lo), l, u))
        return QuantParams(s, z, bits, l, u)
    s = (hi - lo) / (2 ** bits - 1)
    z = int(np.clip(np.round(-lo / s), l, u))
    return QuantParams(float(s), z, bits, l, u)


def calibrate_minmax(x, bits, mask=None):
    """Unsigned asymmetric min-max params over x, optionally masked."""
    x = as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ValueError(f"mask shape {mask.shape} != data shape {x.shape}")
        x = x[mask]
    if x.size == 0:
        raise ValueError("min-max calibration over an empty selection")
    return _unsigned_params(float(np.min(x)), float(np.max(x)), bits)


def calibrate_symmetric(x, bits):
    """Symmetric signed min-max params (zero_point = 0), used for weights."""
    x = as_tensor(x)
    if x.size == 0:
        raise ValueError("min-max calibration over an empty selection")
    l, u = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    max_abs = float(np.max(np.abs(x)))
    s = max_abs / u if max_abs > 0 else 1.0
    return QuantParams(float(s), 0, bits, l, u)


def scale_grid(base, steps):
    """Candidate params with the base range shrunk by factors 1.0 down to 0.3.

    The shrink is multiplicative about the center of the base range; the
    zero-point is recomputed so the shrunken range stays centered.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    factors = np.linspace(1.0, 0.3, steps)
    lo, hi = base.range_low, base.range_high
    center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    out = []
    for f in factors:
        if f == 1.0:
            out.append(base)
            continue
        nlo, nhi = center - f * half, center + f * half
        s = (nhi - nlo) / (base.code_high - base.code_low)
        z = int(np.clip(np.round(base.code_low - nlo / s), base.code_low, base.code_high))
        out.append(QuantParams(float(s), z, base.bits, base.code_low, base.code_high))
    return out
