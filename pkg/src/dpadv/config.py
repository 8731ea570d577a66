"""Experiment configuration files.

Grammar, one entry per line::

    # comment (also after a value)
    section.key = value

Values are ``true``/``false``, integers, floats, fractions such as ``8/255``,
comma-separated lists of those, or bare strings (optionally double-quoted).
An empty value leaves the field unset.
Keys not listed in :data:`KEYS` are rejected.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .attack import AttackConfig


class ConfigError(ValueError):
    pass


# Hyperparameter table: target dp epsilon and PGD settings per dataset.
PRESETS = {
    "mnist": dict(target_epsilon=1.0, steps=25, step_size=0.02, gamma=0.25),
    "fmnist": dict(target_epsilon=1.0, steps=15, step_size=0.02, gamma=0.15),
    "cifar10": dict(target_epsilon=3.0, steps=10, step_size=2 / 255, gamma=8 / 255),
}


@dataclass
class DatasetSpec:
    kind: str = "synth"
    preset: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    subset: int | None = None
    classes: int = 4
    features: int = 20
    n_per_class: int = 500
    separation: float = 0.8
    noise_std: float = 0.2


@dataclass
class TrainSpec:
    learning_rate: float = 0.005
    weight_decay: float = 5e-4
    batch_size: int = 128


@dataclass
class DPSpec:
    target_epsilon: float | None = None
    noise_multiplier: float | None = None
    delta: float = 1e-5
    clip_norm: float = 1.0
    sample_rate: float | None = None


@dataclass
class AttackSpec:
    kind: str = "pgd"
    gamma: float | None = None
    step_size: float | None = None
    steps: int | None = None
    random_start: bool = False

    def build(self) -> AttackConfig:
        return AttackConfig(kind=self.kind, gamma=self.gamma, step_size=self.step_size,
                            steps=self.steps, random_start=self.random_start)


@dataclass
class AuditSpec:
    n_audit: int = 1000
    score_kind: str = "confidence_true_class"
    group_level: bool = True
    perturbed_groups: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    epochs: int = 200
    output_dir: str = "results"
    regimes: tuple[str, ...] = ("none", "adv", "dp", "dp_adv")
    hidden: tuple[int, ...] = (256, 128)
    smooth_window: int = 10
    adv_eval_size: int | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    dp: DPSpec = field(default_factory=DPSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    audit: AuditSpec = field(default_factory=AuditSpec)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = ("dataset", "train", "dp", "attack", "audit")
_TOP = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name not in _SECTIONS}
_ALIASES = {"model.hidden": "hidden", "eval.adv_size": "adv_eval_size", "smooth.window": "smooth_window"}


def _keys():
    keys = {k: k for k in _TOP}
    keys.update({alias: target for alias, target in _ALIASES.items()})
    for section in _SECTIONS:
        spec_cls = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[section].default_factory
        for f in dataclasses.fields(spec_cls):
            keys[f"{section}.{f.name}"] = f"{section}.{f.name}"
    return keys


KEYS = _keys()

_NUM = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_value(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] == '"':
        return text[1:-1]
    if "," in text:
        return tuple(parse_value(part) for part in text.split(",") if part.strip())
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if not text:
        return None
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    if _NUM.match(text):
        return float(text)
    if re.fullmatch(r"\d+\s*/\s*\d+", text):
        return float(Fraction(text.replace(" ", "")))
    return text


def parse_text(text: str) -> dict:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if KEYS[key] in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[KEYS[key]] = parse_value(value)
    return entries


def _coerce(name: str, value, default):
    """Fit a parsed value to the type of the field's default."""
    if isinstance(default, tuple):
        value = value if isinstance(value, tuple) else (value,)
        kind = type(default[0]) if default else str
        if kind is int and not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{name}: expected a list of integers")
        return tuple(str(v) for v in value) if kind is str else value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def from_entries(entries: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in entries.items():
        if "." in key:
            section, name = key.split(".", 1)
            target = getattr(cfg, section)
        else:
            target, name = cfg, key
        default = getattr(target, name)
        setattr(target, name, _coerce(key, value, default))
    try:
        apply_preset(cfg)
        validate(cfg)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"mistyped value: {exc}") from None
    return cfg


def apply_preset(cfg: ExperimentConfig) -> None:
    """Fill unset attack and privacy fields from the dataset preset."""
    preset = PRESETS.get(cfg.dataset.preset or "", PRESETS["mnist"])
    if cfg.dataset.preset and cfg.dataset.preset not in PRESETS:
        raise ConfigError(f"unknown preset {cfg.dataset.preset!r}; choose from {sorted(PRESETS)}")
    a = cfg.attack
    a.gamma = preset["gamma"] if a.gamma is None else float(a.gamma)
    a.step_size = preset["step_size"] if a.step_size is None else float(a.step_size)
    a.steps = preset["steps"] if a.steps is None else a.steps
    if cfg.dp.target_epsilon is None and cfg.dp.noise_multiplier is None:
        cfg.dp.target_epsilon = preset["target_epsilon"]


def validate(cfg: ExperimentConfig) -> None:
    from .trainer import REGIMES
    from .mia import SCORE_KINDS

    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a non-negative integer")
    need(isinstance(cfg.epochs, int) and cfg.epochs >= 1, "epochs must be a positive integer")
    need(len(cfg.regimes) > 0, "regimes must not be empty")
    for r in cfg.regimes:
        need(r in REGIMES, f"unknown regime {r!r}; choose from {REGIMES}")
    need(len(set(cfg.regimes)) == len(cfg.regimes), "regimes must not repeat")
    need(all(isinstance(h, int) and h > 0 for h in cfg.hidden), "model.hidden must be positive integers")
    need(isinstance(cfg.smooth_window, int) and cfg.smooth_window >= 1, "smooth.window must be >= 1")
    need(cfg.adv_eval_size is None or (isinstance(cfg.adv_eval_size, int) and cfg.adv_eval_size > 0),
         "eval.adv_size must be a positive integer")
    d = cfg.dataset
    need(d.kind in ("synth", "idx"), "dataset.kind must be synth or idx")
    if d.kind == "idx":
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            need(getattr(d, name), f"dataset.{name} is required for idx data")
    else:
        need(isinstance(d.classes, int) and d.classes >= 2, "dataset.classes must be >= 2")
        need(isinstance(d.features, int) and d.features >= d.classes, "dataset.features must be >= classes")
        need(isinstance(d.n_per_class, int) and d.n_per_class >= 5, "dataset.n_per_class must be >= 5")
        need(d.noise_std >= 0, "dataset.noise_std must be >= 0")
    need(d.subset is None or (isinstance(d.subset, int) and d.subset > 0), "dataset.subset must be positive")
    t = cfg.train
    need(t.learning_rate > 0, "train.learning_rate must be > 0")
    need(t.weight_decay >= 0, "train.weight_decay must be >= 0")
    need(isinstance(t.batch_size, int) and t.batch_size >= 1, "train.batch_size must be >= 1")
    p = cfg.dp
    need(0 < p.delta < 1, "dp.delta must be in (0, 1)")
    need(p.clip_norm > 0, "dp.clip_norm must be > 0")
    need(p.sample_rate is None or 0 < p.sample_rate <= 1, "dp.sample_rate must be in (0, 1]")
    need(p.target_epsilon is None or p.target_epsilon > 0, "dp.target_epsilon must be > 0")
    need(p.noise_multiplier is None or p.noise_multiplier >= 0, "dp.noise_multiplier must be >= 0")
    try:
        cfg.attack.build()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"attack: {exc}") from None
    a = cfg.audit
    need(isinstance(a.n_audit, int) and a.n_audit >= 1, "audit.n_audit must be >= 1")
    need(a.score_kind in SCORE_KINDS, f"audit.score_kind must be one of {SCORE_KINDS}")


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = from_entries(parse_text(text))
    base = Path(path).parent
    d = cfg.dataset
    for name in ("train_images", "train_labels", "test_images", "test_labels"):
        value = getattr(d, name)
        if value and not Path(value).is_absolute():
            setattr(d, name, str(base / value))
    return cfg
