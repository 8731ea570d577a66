"""Run a grid of training regimes, audit each final model, write the results bundle."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, mia, nn, report
from .accountant import calibrate_sigma
from .config import ConfigError, ExperimentConfig
from .data import Dataset, load_idx, synth_blobs
from .dp_optim import DPConfig
from .trainer import REGIMES, EpochRecord, Regime, TrainingDiverged, train

log = logging.getLogger(__name__)

# fixed per-regime offsets: the seed a regime trains with never depends on
# which other regimes share the run or in what order they execute
SEED_OFFSETS = {kind: 1000 * (i + 1) for i, kind in enumerate(REGIMES)}


@dataclass
class RegimeOutcome:
    kind: str
    history: list[EpochRecord]
    model: nn.Model | None = None
    individual: mia.MIAReport | None = None
    groups: dict[int, mia.MIAReport] = field(default_factory=dict)
    perturbed_groups: dict[int, mia.MIAReport] = field(default_factory=dict)
    error: str | None = None


@dataclass
class ResultsBundle:
    outcomes: dict[str, RegimeOutcome]
    manifest: dict
    files: dict[str, str]

    @property
    def failed(self) -> list[str]:
        return [k for k, o in self.outcomes.items() if o.error]


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind == "synth":
        train_set, test_set = synth_blobs(d.classes, d.features, d.n_per_class, d.separation,
                                          d.noise_std, cfg.seed)
    else:
        try:
            train_set = load_idx(d.train_images, d.train_labels, name="train")
            test_set = load_idx(d.test_images, d.test_labels, name="test")
        except OSError as exc:
            raise ConfigError(f"cannot read dataset: {exc}") from None
    if d.subset is not None:
        rng = np.random.Generator(np.random.PCG64([cfg.seed, 7]))
        if d.subset < len(train_set):
            train_set = train_set.subset(np.sort(rng.choice(len(train_set), d.subset, replace=False)))
        if d.subset < len(test_set):
            test_set = test_set.subset(np.sort(rng.choice(len(test_set), d.subset, replace=False)))
    return train_set, test_set


def dp_config(cfg: ExperimentConfig, n_train: int) -> DPConfig:
    """Resolve sample rate and noise multiplier (calibrated when not given)."""
    p = cfg.dp
    q = p.sample_rate if p.sample_rate is not None else min(1.0, cfg.train.batch_size / n_train)
    steps = cfg.epochs * max(1, round(1 / q))
    sigma = p.noise_multiplier
    if sigma is None:
        sigma = calibrate_sigma(p.target_epsilon, p.delta, q, steps)
    return DPConfig(clip_norm=p.clip_norm, noise_multiplier=float(sigma), sample_rate=float(q),
                    learning_rate=cfg.train.learning_rate, iterations=steps, delta=p.delta,
                    weight_decay=cfg.train.weight_decay)


def build_regime(kind: str, cfg: ExperimentConfig, dp: DPConfig) -> Regime:
    atk = cfg.attack.build()
    return Regime(kind, attack=atk if kind in ("adv", "dp_adv") else None,
                  dp=dp if kind in ("dp", "dp_adv") else None,
                  learning_rate=cfg.train.learning_rate, weight_decay=cfg.train.weight_decay,
                  batch_size=cfg.train.batch_size)


def run_regime(kind: str, cfg: ExperimentConfig, dp: DPConfig, train_set: Dataset,
               test_set: Dataset) -> RegimeOutcome:
    regime = build_regime(kind, cfg, dp)
    atk = cfg.attack.build()
    init = nn.init_params(cfg.seed, (train_set.n_features, *cfg.hidden, train_set.n_classes))
    try:
        result = train(init, train_set, test_set, regime, cfg.epochs, cfg.seed + SEED_OFFSETS[kind],
                       eval_attack=atk, adv_eval_size=cfg.adv_eval_size)
    except TrainingDiverged as exc:
        return RegimeOutcome(kind, [], error=str(exc))
    out = RegimeOutcome(kind, result.history, result.model)
    a = cfg.audit
    n_audit = min(a.n_audit, len(train_set), len(test_set))
    out.individual = mia.attack_individual(result.model, train_set, test_set, n_audit, cfg.seed,
                                           a.score_kind)
    if a.group_level:
        out.groups = mia.group_reports(result.model, train_set, test_set, n_audit, cfg.seed,
                                       a.score_kind)
    if a.perturbed_groups:
        rng = np.random.Generator(np.random.PCG64([cfg.seed, 11]))
        out.perturbed_groups = mia.group_reports(result.model, train_set, test_set, n_audit,
                                                 cfg.seed, a.score_kind, perturb=atk, rng=rng)
    return out


def _fingerprint(*datasets: Dataset) -> str:
    h = hashlib.sha256()
    for ds in datasets:
        h.update(np.ascontiguousarray(ds.inputs).tobytes())
        h.update(np.ascontiguousarray(ds.labels).tobytes())
    return h.hexdigest()


def manifest(cfg: ExperimentConfig, dp: DPConfig, train_set: Dataset, test_set: Dataset) -> dict:
    return {
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "resolved": {
            "noise_multiplier": dp.noise_multiplier,
            "sample_rate": dp.sample_rate,
            "iterations": dp.iterations,
            "seed_offsets": {k: SEED_OFFSETS[k] for k in cfg.regimes},
            "n_train": len(train_set),
            "n_test": len(test_set),
            "dataset_sha256": _fingerprint(train_set, test_set),
        },
        "numpy": np.__version__,
    }


def write_bundle(outcomes: dict[str, RegimeOutcome], info: dict, cfg: ExperimentConfig,
                 out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name: str, text: str):
        path = out_dir / name
        path.write_text(text)
        files[name] = str(path)

    histories = {k: o.history for k, o in outcomes.items()}
    put("metrics.csv", report.metrics_csv(histories))
    put("metrics_smoothed.csv", report.metrics_csv(histories, cfg.smooth_window))
    rows = []
    summary = {"seed": cfg.seed, "epochs": cfg.epochs, "regimes": {},
               "noise_multiplier": info["resolved"]["noise_multiplier"],
               "sample_rate": info["resolved"]["sample_rate"], "delta": cfg.dp.delta}
    for kind, o in outcomes.items():
        if o.individual is None:
            continue
        rows.append(report.mia_row(kind, "individual", None, o.individual))
        for c, r in sorted(o.groups.items()):
            rows.append(report.mia_row(kind, "class", c, r))
        for c, r in sorted(o.perturbed_groups.items()):
            rows.append(report.mia_row(kind, "perturbed_class", c, r))
        summary["regimes"][kind] = {"last": o.history[-1], "individual": o.individual,
                                    "class": o.groups, "perturbed_class": o.perturbed_groups}
        (out_dir / "models").mkdir(exist_ok=True)
        checkpoint.save(o.model, out_dir / "models" / f"{kind}.ckpt")
        files[f"models/{kind}.ckpt"] = str(out_dir / "models" / f"{kind}.ckpt")
    put("mia.csv", report.mia_csv(rows))
    put("report.txt", report.text_report(summary))
    put("manifest.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    return files


def run(cfg: ExperimentConfig, jobs: int = 1, output_dir: str | Path | None = None) -> ResultsBundle:
    """Train every configured regime, audit the final models, write the bundle.

    Regimes that diverge are reported in ``ResultsBundle.failed``; everything
    that finished is still written.
    """
    train_set, test_set = load_datasets(cfg)
    dp = dp_config(cfg, len(train_set))
    info = manifest(cfg, dp, train_set, test_set)
    args = [(kind, cfg, dp, train_set, test_set) for kind in cfg.regimes]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_regime, *zip(*args)))
    else:
        results = [run_regime(*a) for a in args]
    outcomes = {o.kind: o for o in results}
    for o in results:
        if o.error:
            log.error("regime %s diverged: %s", o.kind, o.error)
    out_dir = Path(output_dir if output_dir is not None else cfg.output_dir)
    files = write_bundle(outcomes, info, cfg, out_dir)
    return ResultsBundle(outcomes, info, files)


def audit(model: nn.Model, cfg: ExperimentConfig) -> tuple[list[list], dict]:
    """Audit a saved model against the members/non-members the config describes."""
    train_set, test_set = load_datasets(cfg)
    if model.n_inputs != train_set.n_features or model.n_classes != train_set.n_classes:
        raise ConfigError(f"model dims {model.dims} do not fit the configured dataset")
    a = cfg.audit
    n_audit = min(a.n_audit, len(train_set), len(test_set))
    out = RegimeOutcome("audit", [], model)
    out.individual = mia.attack_individual(model, train_set, test_set, n_audit, cfg.seed, a.score_kind)
    rows = [report.mia_row("audit", "individual", None, out.individual)]
    if a.group_level:
        out.groups = mia.group_reports(model, train_set, test_set, n_audit, cfg.seed, a.score_kind)
        rows += [report.mia_row("audit", "class", c, r) for c, r in sorted(out.groups.items())]
    if a.perturbed_groups:
        rng = np.random.Generator(np.random.PCG64([cfg.seed, 11]))
        out.perturbed_groups = mia.group_reports(model, train_set, test_set, n_audit, cfg.seed,
                                                 a.score_kind, perturb=cfg.attack.build(), rng=rng)
        rows += [report.mia_row("audit", "perturbed_class", c, r)
                 for c, r in sorted(out.perturbed_groups.items())]
    return rows, {"individual": out.individual, "class": out.groups,
                  "perturbed_class": out.perturbed_groups}
