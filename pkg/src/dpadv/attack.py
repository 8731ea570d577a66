"""L-infinity evasion attacks (FGSM, PGD) solving the inner maximization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    gamma: float = 0.25
    step_size: float = 0.02
    steps: int = 25
    random_start: bool = False
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if self.steps > 1 and self.step_size > self.gamma and self.gamma > 0:
            raise ValueError("step_size must not exceed gamma for multi-step PGD")


def _project(x: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    x = np.clip(x, x0 - cfg.gamma, x0 + cfg.gamma)
    return np.clip(x, cfg.lower, cfg.upper)


def _checked(x: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    assert np.max(np.abs(x - x0), initial=0.0) <= cfg.gamma + 1e-12, "left the gamma ball"
    assert x.size == 0 or (x.min() >= cfg.lower and x.max() <= cfg.upper), "left the input box"
    return x


def fgsm(model: nn.Model, inputs, labels, cfg: AttackConfig) -> np.ndarray:
    """``clip(x + gamma * sign(grad_x L), 0, 1)``."""
    x0 = np.asarray(inputs, dtype=np.float64)
    if cfg.gamma == 0:
        return x0.copy()
    g = nn.grad_wrt_input(model, x0, labels)
    return _checked(_project(x0 + cfg.gamma * np.sign(g), x0, cfg), x0, cfg)


def pgd(model: nn.Model, inputs, labels, cfg: AttackConfig,
        rng: np.random.Generator | None = None) -> np.ndarray:
    """Signed-gradient ascent projected onto the gamma ball and the input box.

    ``rng`` is only consumed when ``cfg.random_start`` is set.
    """
    x0 = np.asarray(inputs, dtype=np.float64)
    if cfg.gamma == 0:
        return x0.copy()
    x = x0
    if cfg.random_start:
        if rng is None:
            raise ValueError("random_start needs an rng")
        x = _project(x0 + rng.uniform(-cfg.gamma, cfg.gamma, size=x0.shape), x0, cfg)
    for _ in range(cfg.steps):
        g = nn.grad_wrt_input(model, x, labels)
        x = _project(x + cfg.step_size * np.sign(g), x0, cfg)
    return _checked(x, x0, cfg)


def perturb(model: nn.Model, inputs, labels, cfg: AttackConfig,
            rng: np.random.Generator | None = None) -> np.ndarray:
    if cfg.kind == "fgsm":
        return fgsm(model, inputs, labels, cfg)
    return pgd(model, inputs, labels, cfg, rng)


def adversarial_accuracy(model: nn.Model, dataset, cfg: AttackConfig,
                         rng: np.random.Generator | None = None, chunk: int = 4096) -> float:
    """Accuracy on ``dataset`` after every point is perturbed against ``model``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    correct = 0
    for start in range(0, len(dataset), chunk):
        x = dataset.inputs[start:start + chunk]
        y = dataset.labels[start:start + chunk]
        x_adv = perturb(model, x, y, cfg, rng)
        correct += int(np.sum(nn.predict(model, x_adv) == y))
    return correct / len(dataset)
