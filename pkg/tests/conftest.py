import mpmath
import numpy as np
import pytest

from dpadv import nn


def random_net(seed, max_params=1000, kink_margin=1e-3, batch=3):
    """Small random MLP plus a batch whose ReLU pre-activations avoid the kink.

    Finite differences are only meaningful where the net is differentiable,
    so inputs are redrawn until every hidden pre-activation is at least
    ``kink_margin`` away from zero.
    """
    rng = np.random.default_rng(seed)
    while True:
        depth = rng.integers(1, 4)
        dims = [int(rng.integers(2, 9)) for _ in range(depth + 1)]
        dims[-1] = int(rng.integers(2, 6))
        if nn.param_count(dims) <= max_params:
            break
    model = nn.init_params(int(rng.integers(1 << 30)), dims)
    # non-zero biases so the bias gradient path is exercised
    model.params += 0.1 * rng.standard_normal(model.n_params)
    for _ in range(1000):
        x = rng.random((batch, dims[0]))
        y = rng.integers(0, dims[-1], size=batch)
        pre = nn._forward_cache(model, x)[1][:-1]
        if all(np.min(np.abs(z)) > kink_margin for z in pre):
            return model, x, y
    raise RuntimeError("could not place inputs away from ReLU kinks")


def fd_param_grad(model, x, y, h=1e-5):
    """Central differences of each example's loss with respect to every parameter."""
    out = np.zeros((len(y), model.n_params))
    for j in range(model.n_params):
        plus = model.copy()
        plus.params[j] += h
        minus = model.copy()
        minus.params[j] -= h
        lp = nn.loss_ce(nn.forward(plus, x), y)[0]
        lm = nn.loss_ce(nn.forward(minus, x), y)[0]
        out[:, j] = (lp - lm) / (2 * h)
    return out


def fd_input_grad(model, x, y, h=1e-5):
    """Central differences of the mean loss with respect to each input coordinate."""
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        out[idx] = (nn.loss_ce(nn.forward(model, xp), y)[1] - nn.loss_ce(nn.forward(model, xm), y)[1]) / (2 * h)
    return out


def assert_rel_close(actual, expected, rtol=1e-5, atol=1e-8):
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)


def moment_oracle(q, sigma, order, dps=40):
    """log E_{z~N(0, s^2)}[((1-q) + q exp((2z-1)/(2 s^2)))^order] / (order-1) by quadrature.

    Integrates the density ratio directly, independent of the binomial
    expansion used by the accountant.
    """
    mpmath.mp.dps = dps
    q, s, a = mpmath.mpf(q), mpmath.mpf(sigma), mpmath.mpf(order)

    def f(z):
        mu0 = mpmath.exp(-z ** 2 / (2 * s ** 2)) / (s * mpmath.sqrt(2 * mpmath.pi))
        ratio = (1 - q) + q * mpmath.exp((2 * z - 1) / (2 * s ** 2))
        return mu0 * ratio ** a

    # the integrand peaks between 0 and ~order; split there for accuracy
    pts = [-mpmath.inf, -10 * s, 0, mpmath.mpf(0.5), a / 2, a, a + 10 * s, mpmath.inf]
    pts = sorted(set(pts))
    return float(mpmath.log(mpmath.quad(f, pts)) / (a - 1))


@pytest.fixture
def blobs_small():
    from dpadv.data import synth_blobs
    return synth_blobs(3, 6, 40, 0.8, 0.15, 0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
