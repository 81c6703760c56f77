"""Gradient defenses applied at the cut: clipped Gaussian noise and magnitude pruning.

Both operate on one per-sample gradient vector at a time, so they commute with
the order in which the tape records entries. Noise amplitude follows the usual
clip-then-noise parameterization: the vector is scaled to L2 norm at most
``clip_norm`` and every coordinate is perturbed with independent Gaussian
noise of standard deviation ``sigma * clip_norm``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import require_finite


@dataclass
class NoiseDefense:
    clip_norm: float
    sigma: float
    rng_seed: int = 0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class CompressionDefense:
    ratio: float

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"compression ratio must be in [0, 1), got {self.ratio}")


@dataclass
class DefenseConfig:
    """At most one defense arm active at a time, matching separate evaluations.

    ``reported_epsilon``/``reported_delta`` are informational metadata only;
    no privacy accounting happens here.
    """

    noise: NoiseDefense | None = None
    compression: CompressionDefense | None = None
    reported_epsilon: float | None = None
    reported_delta: float | None = None

    def __post_init__(self):
        if self.noise is not None and self.compression is not None:
            raise ValueError("at most one of noise/compression may be active")

    @property
    def active(self) -> bool:
        return self.noise is not None or self.compression is not None


def clip_factor(grad: np.ndarray, clip_norm: float) -> float:
    """min(1, C/||grad||), the per-sample scale that caps the L2 norm at C."""
    norm = float(np.linalg.norm(grad))
    if norm <= clip_norm:
        return 1.0
    return clip_norm / norm


def clip_and_noise(grad: np.ndarray, clip_norm: float, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Scale to norm <= clip_norm, then add N(0, (sigma*clip_norm)^2) per coordinate."""
    grad = np.asarray(grad, dtype=np.float64)
    require_finite(grad, "gradient")
    if not clip_norm > 0:
        raise ValueError(f"clip_norm must be > 0, got {clip_norm}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    out = grad * clip_factor(grad, clip_norm)
    if sigma > 0:
        out = out + rng.normal(0.0, sigma * clip_norm, size=grad.shape)
    return out


def compress(grad: np.ndarray, ratio: float) -> np.ndarray:
    """Zero out the floor(ratio * len) coordinates of smallest magnitude.

    Ties break toward the lower index; surviving coordinates are untouched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"compression ratio must be in [0, 1), got {ratio}")
    n_prune = int(np.floor(ratio * grad.size))
    if n_prune == 0:
        return grad.copy()
    order = np.argsort(np.abs(grad), kind="stable")
    out = grad.copy()
    out[order[:n_prune]] = 0.0
    return out
