"""Threshold membership-inference audits.

Members are the positive class.  A point is predicted to be a member when its
score is at least the threshold.  All reports use equal member and non-member
counts, so accuracy is also the balanced accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import attack, nn
from .data import Dataset

SCORE_KINDS = ("confidence_true_class", "negative_loss")


@dataclass(frozen=True)
class ScoreSet:
    member: np.ndarray
    nonmember: np.ndarray
    kind: str = "confidence_true_class"

    def __post_init__(self):
        m = np.asarray(self.member, dtype=np.float64)
        n = np.asarray(self.nonmember, dtype=np.float64)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(n))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "member", m)
        object.__setattr__(self, "nonmember", n)


@dataclass
class MIAReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    threshold: float
    n_members: int
    n_nonmembers: int
    per_class: dict[int, float] | None = field(default=None)


def score(model: nn.Model, inputs, labels, kind: str = "confidence_true_class") -> np.ndarray:
    logits = nn.forward(model, inputs)
    if kind == "confidence_true_class":
        return nn.softmax(logits)[np.arange(len(logits)), np.asarray(labels)]
    if kind == "negative_loss":
        return -nn.loss_ce(logits, labels)[0]
    raise ValueError(f"unknown score kind {kind!r}")


def candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    """-inf, midpoints between consecutive distinct scores, +inf (ascending)."""
    distinct = np.unique(np.concatenate([scores.member, scores.nonmember]))
    mids = (distinct[:-1] + distinct[1:]) / 2
    return np.concatenate([[-math.inf], mids, [math.inf]])


def _positives(scores: ScoreSet, thresholds: np.ndarray):
    """Counts of members and non-members scoring >= each threshold."""
    m = np.sort(scores.member)
    n = np.sort(scores.nonmember)
    tp = len(m) - np.searchsorted(m, thresholds, side="left")
    fp = len(n) - np.searchsorted(n, thresholds, side="left")
    return tp, fp


def balanced_accuracy(scores: ScoreSet, threshold: float) -> float:
    tp, fp = _positives(scores, np.array([threshold]))
    return float((tp[0] / len(scores.member) + 1.0 - fp[0] / len(scores.nonmember)) / 2)


def choose_threshold(scores: ScoreSet) -> float:
    """Candidate threshold with the best balanced accuracy; ties go to the smallest."""
    if len(scores.member) == 0 or len(scores.nonmember) == 0:
        raise ValueError("both populations must be non-empty")
    cands = candidate_thresholds(scores)
    tp, fp = _positives(scores, cands)
    # integer form of tpr - fpr so ties compare exactly
    gain = tp.astype(np.int64) * len(scores.nonmember) - fp.astype(np.int64) * len(scores.member)
    return float(cands[int(np.argmax(gain))])


def evaluate(scores: ScoreSet, threshold: float) -> MIAReport:
    m, n = scores.member, scores.nonmember
    tp = int(np.sum(m >= threshold))
    fn = len(m) - tp
    fp = int(np.sum(n >= threshold))
    tn = len(n) - fp
    total = tp + fn + fp + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MIAReport(
        accuracy=(tp + tn) / total if total else 0.0,
        precision=precision, recall=recall, f1=f1, threshold=float(threshold),
        n_members=len(m), n_nonmembers=len(n),
    )


def attack_scores(scores: ScoreSet, threshold: float | None = None) -> MIAReport:
    """Evaluate at ``threshold``, or at the optimal one when it is None."""
    if threshold is None:
        threshold = choose_threshold(scores)
    return evaluate(scores, threshold)


def _audit_indices(n_train: int, n_test: int, n_audit: int | None, seed: int):
    k = min(n_train, n_test) if n_audit is None else n_audit
    if k > min(n_train, n_test):
        raise ValueError(f"n_audit={k} exceeds the smaller split ({min(n_train, n_test)})")
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.sort(rng.choice(n_train, k, replace=False)), np.sort(rng.choice(n_test, k, replace=False))


def attack_individual(model: nn.Model, train: Dataset, test: Dataset, n_audit: int | None = 1000,
                      seed: int = 0, kind: str = "confidence_true_class",
                      threshold: float | None = None) -> MIAReport:
    """Global attack on ``n_audit`` sampled members and as many non-members."""
    mi, ni = _audit_indices(len(train), len(test), n_audit, seed)
    scores = ScoreSet(score(model, train.inputs[mi], train.labels[mi], kind),
                      score(model, test.inputs[ni], test.labels[ni], kind), kind)
    return attack_scores(scores, threshold)


def group_reports(model: nn.Model, train: Dataset, test: Dataset, n_audit: int | None = 1000,
                  seed: int = 0, kind: str = "confidence_true_class",
                  perturb: attack.AttackConfig | None = None,
                  rng: np.random.Generator | None = None) -> dict[int, MIAReport]:
    """Per-class attacks with independently chosen thresholds.

    Within each class the larger pool is trimmed so members and non-members
    are equally many.  Classes with fewer than two of either are left out.
    With ``perturb`` both pools are replaced by their adversarial versions
    before scoring.
    """
    mi, ni = _audit_indices(len(train), len(test), n_audit, seed)
    trim = np.random.Generator(np.random.PCG64(seed + 1))
    out = {}
    for c in range(train.n_classes):
        mc = mi[train.labels[mi] == c]
        nc = ni[test.labels[ni] == c]
        k = min(len(mc), len(nc))
        if k < 2:
            continue
        mc = np.sort(trim.permutation(mc)[:k])
        nc = np.sort(trim.permutation(nc)[:k])
        xm, xn = train.inputs[mc], test.inputs[nc]
        ym, yn = train.labels[mc], test.labels[nc]
        if perturb is not None:
            xm = attack.perturb(model, xm, ym, perturb, rng)
            xn = attack.perturb(model, xn, yn, perturb, rng)
        scores = ScoreSet(score(model, xm, ym, kind), score(model, xn, yn, kind), kind)
        out[c] = attack_scores(scores)
    return out


def attack_groups(model: nn.Model, train: Dataset, test: Dataset,
                  perturb: attack.AttackConfig | None = None, seed: int = 0,
                  n_audit: int | None = 1000, kind: str = "confidence_true_class",
                  rng: np.random.Generator | None = None) -> dict[int, float]:
    """Class id -> membership attack accuracy for that class."""
    reports = group_reports(model, train, test, n_audit, seed, kind, perturb, rng)
    return {c: r.accuracy for c, r in reports.items()}
