"""DP-SGD pieces: Poisson subsampling, per-example clipping, Gaussian noise, updates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DPConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    sample_rate: float = 0.01
    learning_rate: float = 0.005
    iterations: int = 1
    delta: float = 1e-5
    weight_decay: float = 5e-4

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if not self.noise_multiplier >= 0:
            raise ValueError("noise_multiplier must be >= 0")
        if not 0 < self.sample_rate <= 1:
            raise ValueError("sample_rate must be in (0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, round(1 / self.sample_rate))


class NoiseSource:
    """Seeded variate stream (numpy PCG64 bit generator, ziggurat normals).

    One instance per training run; not safe to share between threads.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def normal(self, size) -> np.ndarray:
        return self._rng.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self._rng.random(size)


def poisson_subsample(n: int, q: float, noise: NoiseSource) -> np.ndarray:
    """Sorted indices, each of ``range(n)`` kept independently with probability ``q``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.flatnonzero(noise.uniform(n) < q)


def clip(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``g`` by ``min(1, C/||g||)``; rows already inside the ball come back untouched."""
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm:
        return g
    out = g * (clip_norm / norm)
    assert np.linalg.norm(out) <= clip_norm * (1 + 1e-12)
    return out


def clip_rows(rows: np.ndarray, clip_norm: float) -> np.ndarray:
    return np.stack([clip(r, clip_norm) for r in rows]) if len(rows) else rows


def gaussian_mechanism(total: np.ndarray, clip_norm: float, noise_multiplier: float,
                       noise: NoiseSource) -> np.ndarray:
    """``total + sigma * C * z`` with a fresh standard normal ``z``."""
    if noise_multiplier == 0:
        return np.array(total, dtype=np.float64)
    if math.isinf(clip_norm):
        raise ValueError("noise with an unbounded clip norm has unbounded scale")
    return total + (noise_multiplier * clip_norm) * noise.normal(np.shape(total))


def noisy_aggregate(rows: np.ndarray, clip_norm: float, noise_multiplier: float,
                    noise: NoiseSource) -> np.ndarray:
    """Sum already-clipped rows and add Gaussian noise."""
    rows = np.asarray(rows, dtype=np.float64)
    return gaussian_mechanism(rows.sum(axis=0), clip_norm, noise_multiplier, noise)


def sgd_step(theta: np.ndarray, grad: np.ndarray, lr: float, weight_decay: float = 0.0) -> np.ndarray:
    """Plain descent on a mean gradient with decoupled weight decay."""
    if weight_decay:
        return theta - lr * (grad + weight_decay * theta)
    return theta - lr * grad


def dp_step(theta: np.ndarray, noisy_sum: np.ndarray, lr: float, batch_size: int,
            weight_decay: float = 0.0) -> np.ndarray:
    """``theta - lr/|B| * (g_t + wd*|B|*theta)``; the caller skips empty batches."""
    if batch_size < 1:
        raise ValueError("empty batch: skip the update instead")
    return sgd_step(theta, noisy_sum / batch_size, lr, weight_decay)
