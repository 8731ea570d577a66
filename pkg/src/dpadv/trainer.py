"""Training regimes: no defense, adversarial only, DP-SGD only, and DP-Adv."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import attack as attacks
from . import nn
from .accountant import RdpAccountant
from .data import Dataset, shuffled_batches
from .dp_optim import DPConfig, NoiseSource, dp_step, gaussian_mechanism, poisson_subsample, sgd_step

log = logging.getLogger(__name__)

REGIMES = ("none", "adv", "dp", "dp_adv")


class TrainingDiverged(FloatingPointError):
    pass


class PrivacyBudgetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Regime:
    kind: str
    attack: attacks.AttackConfig | None = None
    dp: DPConfig | None = None
    # non-private regimes only; DP regimes take these from ``dp``
    learning_rate: float = 0.005
    weight_decay: float = 5e-4
    batch_size: int = 128

    def __post_init__(self):
        if self.kind not in REGIMES:
            raise ValueError(f"unknown regime {self.kind!r}")
        if self.kind in ("adv", "dp_adv") and self.attack is None:
            raise ValueError(f"regime {self.kind} needs an attack config")
        if self.kind in ("dp", "dp_adv") and self.dp is None:
            raise ValueError(f"regime {self.kind} needs a DP config")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def private(self) -> bool:
        return self.kind in ("dp", "dp_adv")

    @property
    def adversarial(self) -> bool:
        return self.kind in ("adv", "dp_adv")


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    adv_acc: float | None
    train_loss: float
    test_loss: float
    epsilon: float | None = None

    @property
    def gap(self) -> float:
        return self.train_acc - self.test_acc


@dataclass
class TrainResult:
    model: nn.Model
    history: list[EpochRecord]
    steps: int = 0
    trajectory: list[np.ndarray] = field(default_factory=list)


def evaluate(model: nn.Model, dataset: Dataset, attack: attacks.AttackConfig | None = None,
             rng: np.random.Generator | None = None, chunk: int = 4096) -> tuple[float, float]:
    """Argmax accuracy and mean cross-entropy, on perturbed inputs when ``attack`` is given."""
    correct, loss_sum = 0, 0.0
    for start in range(0, len(dataset), chunk):
        x = dataset.inputs[start:start + chunk]
        y = dataset.labels[start:start + chunk]
        if attack is not None:
            x = attacks.perturb(model, x, y, attack, rng)
        logits = nn.forward(model, x)
        correct += int(np.sum(logits.argmax(axis=1) == y))
        loss_sum += float(nn.loss_ce(logits, y)[0].sum())
    return correct / len(dataset), loss_sum / len(dataset)


def train(model: nn.Model, train_set: Dataset, test_set: Dataset, regime: Regime, epochs: int,
          seed: int, eval_attack: attacks.AttackConfig | None = None,
          adv_eval_size: int | None = None, record_trajectory: bool = False) -> TrainResult:
    """Train a copy of ``model`` under ``regime`` and evaluate after every epoch.

    Non-private regimes walk shuffled mini-batches with mean-gradient SGD.
    Private regimes run ``round(1/q)`` Poisson-subsampled iterations per epoch
    with clipped, noised gradient sums; an empty batch skips the update but is
    still charged to the accountant.  Adversarial regimes swap each batch for
    its perturbed version against the current parameters before the gradient.

    ``eval_attack`` (default: the regime's attack) sets ``adv_acc``; without one
    the column stays empty.  ``adv_eval_size`` caps the number of test points
    attacked per epoch.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    model = model.copy()
    eval_attack = eval_attack if eval_attack is not None else regime.attack
    batch_rng = np.random.Generator(np.random.PCG64(seed))
    # separate stream so random-start attacks never shift DP noise
    attack_rng = np.random.Generator(np.random.PCG64([seed, 1]))
    noise = NoiseSource(seed)
    accountant = None
    if regime.private:
        dp = regime.dp
        accountant = RdpAccountant(dp.sample_rate, dp.noise_multiplier, dp.delta)
        if dp.noise_multiplier == 0:
            log.warning("noise_multiplier is 0: the DP regime gives no privacy guarantee")
    adv_eval = test_set
    if adv_eval_size is not None and adv_eval_size < len(test_set):
        adv_eval = test_set.subset(np.arange(adv_eval_size))

    history: list[EpochRecord] = []
    trajectory = [model.params.copy()] if record_trajectory else []
    steps = 0
    warned = False
    for epoch in range(1, epochs + 1):
        try:
            if regime.private:
                dp = regime.dp
                for _ in range(dp.steps_per_epoch):
                    idx = poisson_subsample(len(train_set), dp.sample_rate, noise)
                    accountant.step()
                    steps += 1
                    if len(idx) == 0:
                        continue
                    x, y = train_set.inputs[idx], train_set.labels[idx]
                    if regime.adversarial:
                        x = attacks.perturb(model, x, y, regime.attack, attack_rng)
                    total, loss, _ = nn.clipped_gradient_sum(model, x, y, dp.clip_norm)
                    _check_finite(loss, epoch)
                    g = gaussian_mechanism(total, dp.clip_norm, dp.noise_multiplier, noise)
                    model.params = dp_step(model.params, g, dp.learning_rate, len(idx), dp.weight_decay)
                if steps > dp.iterations and not warned:
                    warnings.warn(f"ran {steps} DP steps, beyond the {dp.iterations} budgeted",
                                  PrivacyBudgetWarning, stacklevel=2)
                    warned = True
            else:
                for idx in shuffled_batches(len(train_set), regime.batch_size, batch_rng):
                    x, y = train_set.inputs[idx], train_set.labels[idx]
                    if regime.adversarial:
                        x = attacks.perturb(model, x, y, regime.attack, attack_rng)
                    total, loss = nn.batch_gradient(model, x, y)
                    _check_finite(loss, epoch)
                    model.params = sgd_step(model.params, total / len(idx),
                                            regime.learning_rate, regime.weight_decay)
                    steps += 1
        except nn.NonFiniteGradient as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        if record_trajectory:
            trajectory.append(model.params.copy())
        if not np.all(np.isfinite(model.params)):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        train_acc, train_loss = evaluate(model, train_set)
        test_acc, test_loss = evaluate(model, test_set)
        adv_acc = None
        if eval_attack is not None:
            adv_acc = evaluate(model, adv_eval, eval_attack, attack_rng)[0]
        eps = accountant.spend().epsilon if accountant is not None else None
        history.append(EpochRecord(epoch, train_acc, test_acc, adv_acc, train_loss, test_loss, eps))
        log.debug("%s epoch %d: train %.4f test %.4f adv %s eps %s", regime.kind, epoch,
                  train_acc, test_acc, adv_acc, eps)
    return TrainResult(model, history, steps, trajectory)


def _check_finite(loss: np.ndarray, epoch: int) -> None:
    if not np.all(np.isfinite(loss)):
        raise TrainingDiverged(f"NaN/inf loss in epoch {epoch}")


def epsilon_series(history: list[EpochRecord]) -> list[float]:
    return [r.epsilon if r.epsilon is not None else math.nan for r in history]
