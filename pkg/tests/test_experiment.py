import csv
import io
import json

import numpy as np
import pytest

from dpadv import checkpoint, config, experiment, nn, report
from dpadv.config import ConfigError
from dpadv.trainer import EpochRecord

SMALL = """
seed = 3
epochs = 5
regimes = none
model.hidden = 8
dataset.kind = synth
dataset.classes = 3
dataset.features = 6
dataset.n_per_class = 40
train.learning_rate = 0.1
train.batch_size = 16
attack.gamma = 0.1
attack.step_size = 0.05
attack.steps = 2
audit.n_audit = 20
"""


def small(extra: str = "") -> config.ExperimentConfig:
    return config.from_entries(config.parse_text(SMALL + extra))


# --- config ---------------------------------------------------------------

def test_parse_values():
    assert config.parse_value("8/255") == pytest.approx(8 / 255)
    assert config.parse_value("1e-5") == 1e-5
    assert config.parse_value("3") == 3 and isinstance(config.parse_value("3"), int)
    assert config.parse_value("256, 128") == (256, 128)
    assert config.parse_value("none") == "none"
    assert config.parse_value("") is None
    assert config.parse_value('"a b"') == "a b"
    assert config.parse_value("TRUE") is True


def test_defaults_follow_preset():
    cfg = config.from_entries({})
    assert (cfg.epochs, cfg.train.learning_rate, cfg.train.weight_decay) == (200, 0.005, 5e-4)
    assert (cfg.attack.steps, cfg.attack.step_size, cfg.attack.gamma) == (25, 0.02, 0.25)
    assert cfg.dp.target_epsilon == 1.0
    cifar = config.from_entries(config.parse_text("dataset.preset = cifar10"))
    assert cifar.attack.gamma == pytest.approx(8 / 255) and cifar.dp.target_epsilon == 3.0
    fm = config.from_entries(config.parse_text("dataset.preset = fmnist"))
    assert (fm.attack.steps, fm.attack.gamma) == (15, 0.15)


def test_explicit_values_override_preset():
    cfg = small("dp.noise_multiplier = 1.5\n")
    assert cfg.attack.gamma == 0.1 and cfg.dp.target_epsilon is None


@pytest.mark.parametrize("text", [
    "bogus.key = 1",
    "epochs = 5\nepochs = 6",
    "epochs",
    "epochs = 0",
    "epochs = five",
    "regimes = none, robust",
    "regimes = dp, dp",
    "dataset.kind = csv",
    "dataset.kind = idx",
    "dp.delta = 2",
    "attack.kind = cw",
    "attack.gamma = 0.1\nattack.step_size = 0.5\nattack.steps = 3",
    "audit.score_kind = entropy",
    "audit.group_level = 1",
    "model.hidden = 8, x",
    "dataset.preset = svhn",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        config.from_entries(config.parse_text(text))


def test_load_resolves_relative_idx_paths(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("dataset.kind = idx\ndataset.train_images = a\ndataset.train_labels = b\n"
                 "dataset.test_images = /abs/c\ndataset.test_labels = d\n")
    cfg = config.load(p)
    assert cfg.dataset.train_images == str(tmp_path / "a")
    assert cfg.dataset.test_images == "/abs/c"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "nope.cfg")


# --- smoothing and CSV -----------------------------------------------------

def test_smooth_examples():
    s = list(np.random.default_rng(0).random(7))
    assert report.smooth(s, 1) == s
    assert report.smooth([0.3] * 12) == pytest.approx([0.3] * 12, abs=1e-15)
    out = report.smooth(list(range(1, 21)), 10)
    assert out[-1] == 15.5
    assert out[0] == 1 and out[3] == 2.5
    with pytest.raises(ValueError):
        report.smooth(s, 0)


def test_missing_values_are_empty_fields():
    hist = [EpochRecord(1, 0.5, 0.4, None, 1.0, 1.1, None)]
    text = report.metrics_csv({"none": hist})
    row = text.splitlines()[1].split(",")
    assert row[4] == "" and row[7] == ""
    assert report.fmt(float("nan")) == "" and report.fmt(0.0) == "0.0"


def test_smoothed_csv_leaves_epsilon_raw():
    hist = [EpochRecord(i, i / 10, 0.0, 0.0, 0.0, 0.0, float(i)) for i in range(1, 5)]
    rows = list(csv.DictReader(io.StringIO(report.metrics_csv({"dp": hist}, 10))))
    assert [float(r["epsilon"]) for r in rows] == [1.0, 2.0, 3.0, 4.0]
    assert float(rows[-1]["train_acc"]) == pytest.approx(0.25)


# --- checkpoint ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = nn.init_params(4, (5, 7, 3))
    checkpoint.save(model, tmp_path / "m.ckpt")
    back = checkpoint.load(tmp_path / "m.ckpt")
    assert back.dims == model.dims and back.activations == model.activations
    np.testing.assert_array_equal(back.params, model.params)


def test_checkpoint_layout():
    model = nn.Model((2, 1), ("identity",), np.array([1.0, -2.0, 0.5]))
    raw = checkpoint.dumps(model)
    assert raw[:8] == b"DPADVCKP"
    assert raw[8:12] == (1).to_bytes(4, "little")
    assert raw[12:16] == (2).to_bytes(4, "little")
    assert raw[24:25] == b"\x00"
    assert np.frombuffer(raw[25:], "<f8").tolist() == [1.0, -2.0, 0.5]


@pytest.mark.parametrize("mangle", [
    lambda r: b"XXXXXXXX" + r[8:],
    lambda r: r[:-1],
    lambda r: r + b"\x00",
    lambda r: r[:8] + (2).to_bytes(4, "little") + r[12:],
    lambda r: r[:10],
])
def test_checkpoint_corruption(mangle):
    raw = checkpoint.dumps(nn.init_params(0, (3, 4, 2)))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(mangle(raw))


# --- run -------------------------------------------------------------------

def test_single_regime_shape(tmp_path):
    bundle = experiment.run(small(), output_dir=tmp_path)
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert tuple(rows[0]) == report.METRIC_COLUMNS
    assert len(rows) == 6
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
    assert all(r[7] == "" for r in rows[1:])
    for name in ("metrics_smoothed.csv", "mia.csv", "report.txt", "manifest.json", "models/none.ckpt"):
        assert (tmp_path / name).exists(), name
    assert not bundle.failed
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["epochs"] == 5


def _bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _four():
    text = SMALL.replace("regimes = none", "regimes = none, adv, dp, dp_adv") + "dp.target_epsilon = 2\n"
    return config.from_entries(config.parse_text(text))


def test_rerun_and_parallel_are_byte_identical(tmp_path):
    cfg = _four()
    experiment.run(cfg, output_dir=tmp_path / "a")
    experiment.run(cfg, output_dir=tmp_path / "b")
    experiment.run(cfg, jobs=2, output_dir=tmp_path / "c")
    a, b, c = (_bytes(tmp_path / k) for k in "abc")
    assert a == b == c
    assert len(a["metrics.csv"].splitlines()) == 1 + 4 * 5


def test_regime_results_independent_of_grid(tmp_path):
    experiment.run(_four(), output_dir=tmp_path / "all")
    only = SMALL.replace("regimes = none", "regimes = dp") + "dp.target_epsilon = 2\n"
    experiment.run(config.from_entries(config.parse_text(only)), output_dir=tmp_path / "one")
    assert (tmp_path / "all/models/dp.ckpt").read_bytes() == (tmp_path / "one/models/dp.ckpt").read_bytes()


def test_rerun_from_manifest(tmp_path):
    experiment.run(_four(), output_dir=tmp_path / "a")
    man = json.loads((tmp_path / "a/manifest.json").read_text())
    cfg = config.from_entries(_flatten(man["config"]))
    experiment.run(cfg, output_dir=tmp_path / "b")
    for name in ("metrics.csv", "metrics_smoothed.csv", "mia.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _flatten(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update({f"{k}.{kk}": (tuple(vv) if isinstance(vv, list) else vv) for kk, vv in v.items()})
        else:
            out[k] = tuple(v) if isinstance(v, list) else v
    return out


def test_divergence_preserves_partial_results(tmp_path):
    text = SMALL.replace("regimes = none", "regimes = none, adv").replace(
        "train.learning_rate = 0.1", "train.learning_rate = 1e300")
    with np.errstate(all="ignore"):
        bundle = experiment.run(config.from_entries(config.parse_text(text)), output_dir=tmp_path)
    assert set(bundle.failed) == {"none", "adv"}
    assert (tmp_path / "metrics.csv").read_text().strip() == ",".join(report.METRIC_COLUMNS)


def test_audit_rows(tmp_path):
    cfg = small()
    bundle = experiment.run(cfg, output_dir=tmp_path)
    rows, reports = experiment.audit(bundle.outcomes["none"].model, cfg)
    assert rows[0][:3] == ["audit", "individual", None]
    assert reports["individual"] == bundle.outcomes["none"].individual
    assert len(reports["class"]) == 3


def test_audit_rejects_mismatched_model():
    with pytest.raises(ConfigError):
        experiment.audit(nn.init_params(0, (4, 2)), small())
