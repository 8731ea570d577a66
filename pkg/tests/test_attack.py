import numpy as np
import pytest

from dpadv import attack, nn, trainer
from dpadv.attack import AttackConfig
from dpadv.data import Dataset, synth_blobs


def check_projection(x_adv, x0, gamma):
    assert np.max(np.abs(x_adv - x0)) <= gamma + 1e-12
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0


@pytest.fixture(scope="module")
def trained(request):
    tr, te = synth_blobs(3, 8, 150, 0.8, 0.15, 0)
    model = nn.init_params(1, (8, 16, 3))
    res = trainer.train(model, tr, te, trainer.Regime("none", learning_rate=0.2, batch_size=32), 15, 0)
    return res.model, tr, te


def test_fgsm_zero_budget(trained):
    model, tr, _ = trained
    x = tr.inputs[:10]
    out = attack.fgsm(model, x, tr.labels[:10], AttackConfig("fgsm", 0.0, 0.1, 1))
    np.testing.assert_array_equal(out, x)


def test_fgsm_positive_gradient_direction():
    # single identity layer, label 0: d loss/dx = p - onehot, mapped through W^T
    w = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    model = nn.Model((2, 2), ("identity",), np.concatenate([w.ravel(), [0.0, 0.0]]))
    x = np.array([[0.4, 0.5]])
    assert np.all(nn.grad_wrt_input(model, x, [0]) > 0)
    out = attack.fgsm(model, x, [0], AttackConfig("fgsm", 0.1, 0.1, 1))
    np.testing.assert_allclose(out, x + 0.1, rtol=0, atol=0)


def test_fgsm_moves_full_budget_where_gradient_nonzero(trained):
    model, tr, _ = trained
    x, y = tr.inputs[:50], tr.labels[:50]
    gamma = 0.05
    out = attack.fgsm(model, x, y, AttackConfig("fgsm", gamma, gamma, 1))
    g = nn.grad_wrt_input(model, x, y)
    target = np.clip(x + gamma * np.sign(g), 0, 1)
    moved = (g != 0) & (target == x + gamma * np.sign(g))
    np.testing.assert_allclose(np.abs(out - x)[moved], gamma, rtol=1e-12)
    check_projection(out, x, gamma)


def test_pgd_single_step_equals_fgsm_bitwise(trained):
    model, tr, _ = trained
    x, y = tr.inputs[:40], tr.labels[:40]
    for gamma in (0.01, 0.1, 0.3):
        a = attack.fgsm(model, x, y, AttackConfig("fgsm", gamma, gamma, 1))
        b = attack.pgd(model, x, y, AttackConfig("pgd", gamma, gamma, 1))
        np.testing.assert_array_equal(a, b)


def test_pgd_zero_budget(trained):
    model, tr, _ = trained
    x = tr.inputs[:10]
    np.testing.assert_array_equal(attack.pgd(model, x, tr.labels[:10], AttackConfig("pgd", 0.0, 0.01, 5)), x)


@pytest.mark.parametrize("random_start", [False, True])
def test_pgd_projection(trained, random_start):
    model, tr, _ = trained
    x, y = tr.inputs, tr.labels
    cfg = AttackConfig("pgd", 0.2, 0.05, 10, random_start=random_start)
    out = attack.pgd(model, x, y, cfg, np.random.default_rng(0))
    check_projection(out, x, 0.2)


def test_pgd_increases_loss(trained):
    model, tr, _ = trained
    x, y = tr.inputs, tr.labels
    out = attack.pgd(model, x, y, AttackConfig("pgd", 0.1, 0.02, 10))
    clean = nn.loss_ce(nn.forward(model, x), y)[1]
    adv = nn.loss_ce(nn.forward(model, out), y)[1]
    assert adv >= clean


def test_adversarial_accuracy_zero_budget_is_clean(trained):
    model, _, te = trained
    clean = trainer.evaluate(model, te)[0]
    assert attack.adversarial_accuracy(model, te, AttackConfig("pgd", 0.0, 0.01, 5)) == clean


def test_adversarial_accuracy_constant_classifier():
    # zero weights, bias favours class 1: output cannot depend on the input
    model = nn.Model((4, 3), ("identity",), np.concatenate([np.zeros(12), [0.0, 1.0, 0.0]]))
    labels = np.array([0, 1, 1, 2, 1, 0, 1, 2])
    ds = Dataset(np.random.default_rng(0).random((8, 4)), labels, 3)
    for gamma in (0.0, 0.1, 0.5):
        acc = attack.adversarial_accuracy(model, ds, AttackConfig("pgd", gamma, max(gamma, 0.01), 1))
        assert acc == np.mean(labels == 1)


def test_monotone_budget(trained):
    model, _, te = trained
    a1 = attack.adversarial_accuracy(model, te, AttackConfig("pgd", 0.05, 0.01, 10))
    a2 = attack.adversarial_accuracy(model, te, AttackConfig("pgd", 0.15, 0.03, 10))
    assert a2 <= a1 + 0.02


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("cw")
    with pytest.raises(ValueError):
        AttackConfig("pgd", gamma=0.1, step_size=0.2, steps=5)
    AttackConfig("pgd", gamma=0.1, step_size=0.2, steps=1)
