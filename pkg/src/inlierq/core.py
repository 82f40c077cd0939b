"""Dense tensor helpers, seeded RNG, and descriptive statistics.

Tensors are plain numpy float64 arrays throughout the package; this module
provides the validated constructors and the handful of primitives everything
else builds on.
"""

import numpy as np

Array = np.ndarray


class SeededRng:
    """Deterministic random stream backed by numpy's PCG64.

    PCG64 is a counter-based generator with a published update rule
    (O'Neill's PCG XSL RR 128/64); the same 64-bit seed reproduces the
    same draw sequence on every platform. One instance per execution
    context, never shared.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, mean=0.0, std=1.0, size=None):
        return self._gen.normal(mean, std, size)

    def lognormal(self, mean=0.0, sigma=1.0, size=None):
        return self._gen.lognormal(mean, sigma, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def spawn(self, offset):
        """Independent derived stream, deterministic in (seed, offset)."""
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seed, int(offset)))))
        child = SeededRng.__new__(SeededRng)
        child.seed = self.seed
        child._gen = gen
        return child


def as_tensor(data, allow_nonfinite=False):
    """Coerce to a float64 array and reject NaN/Inf unless asked not to."""
    x = np.asarray(data, dtype=np.float64)
    if not allow_nonfinite and not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))
        raise ValueError(f"non-finite value at index {tuple(bad[0])}")
    return x


_UNARY = {
    "abs": np.abs,
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "relu": lambda x: np.maximum(x, 0.0),
}
_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op, a, b=None):
    """Apply a named elementwise op; binary ops require matching shapes."""
    a = as_tensor(a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} requires two operands")
        b = as_tensor(b)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    if b is not None:
        raise ValueError(f"{op} takes a single operand")
    if op == "log":
        if np.any(a <= 0):
            bad = np.argwhere(a <= 0)
            raise ValueError(f"log of non-positive value at index {tuple(bad[0])}")
        return np.log(a)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown op {op!r}")


def moments(x):
    """Population (mean, variance, skewness); skewness is 0 when variance is 0."""
    x = as_tensor(x).ravel()
    if x.size == 0:
        raise ValueError("moments of empty tensor")
    mu = float(np.mean(x))
    var = float(np.mean((x - mu) ** 2))
    # constant data gives var at rounding-noise level; report it as zero so
    # the skewness does not blow up on noise
    if var <= (1e-12 * max(1.0, abs(mu))) ** 2:
        return mu, 0.0, 0.0
    skew = float(np.mean((x - mu) ** 3)) / var ** 1.5
    return mu, var, skew


def topk_values(x, k):
    """The k largest values with flat indices, descending, ties by lower index."""
    x = as_tensor(x).ravel()
    if not 1 <= k <= x.size:
        raise ValueError(f"k={k} out of range for size {x.size}")
    order = np.argsort(-x, kind="stable")[:k]
    return [(float(x[i]), int(i)) for i in order]
