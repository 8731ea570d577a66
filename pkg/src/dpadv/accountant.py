"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Integer orders use the binomial expansion of the moment
``A_a = E_{z~N(0,s^2)}[((1-q) + q*exp((2z-1)/(2s^2)))^a]``; fractional orders
use the two-sided series split at ``z0``.  Everything is summed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

DEFAULT_ORDERS = (1.25, 1.5) + tuple(float(a) for a in range(2, 65)) + (128.0, 256.0)


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple[float, ...]
    eps: tuple[float, ...]

    def __post_init__(self):
        if len(self.orders) != len(self.eps):
            raise ValueError("orders and eps differ in length")
        if any(a <= 1 for a in self.orders):
            raise ValueError("orders must be > 1")


@dataclass(frozen=True)
class PrivacySpend:
    epsilon: float
    delta: float
    order: float


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log_comb(n: float, k: float) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _log_erfc(x: float) -> float:
    # erfc(x) = 2 * Phi(-x*sqrt(2))
    return math.log(2.0) + float(special.log_ndtr(-x * math.sqrt(2.0)))


def _log_moment_int(q: float, sigma: float, order: int) -> float:
    log_a = -math.inf
    log_q, log_1mq = math.log(q), math.log1p(-q)
    for k in range(order + 1):
        term = _log_comb(order, k) + k * log_q + (order - k) * log_1mq
        log_a = _log_add(log_a, term + (k * k - k) / (2 * sigma ** 2))
    return log_a


def _log_sub(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a >= b."""
    if b == -math.inf:
        return a
    if a <= b:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _log_moment_frac(q: float, sigma: float, order: float, max_terms: int = 10_000) -> float:
    # generalized binomial coefficients alternate in sign once i > order
    log_a0 = log_a1 = -math.inf
    z0 = sigma ** 2 * math.log(1 / q - 1) + 0.5
    log_q, log_1mq = math.log(q), math.log1p(-q)
    for i in range(max_terms):
        positive = special.binom(order, i) > 0
        coef = _log_comb(order, i)
        j = order - i
        t0 = coef + i * log_q + j * log_1mq
        t1 = coef + j * log_q + i * log_1mq
        e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2) * sigma))
        e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2) * sigma))
        s0 = t0 + (i * i - i) / (2 * sigma ** 2) + e0
        s1 = t1 + (j * j - j) / (2 * sigma ** 2) + e1
        if positive:
            log_a0 = _log_add(log_a0, s0)
            log_a1 = _log_add(log_a1, s1)
        else:
            log_a0 = _log_sub(log_a0, s0)
            log_a1 = _log_sub(log_a1, s1)
        if max(s0, s1) < -30:
            return _log_add(log_a0, log_a1)
    # tiny sigma: terms keep growing; an infinite bound at this order is safe
    return math.inf


def rdp_single_step(q: float, sigma: float, order: float) -> float:
    """RDP at ``order`` of one Poisson-subsampled Gaussian release."""
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    if order <= 1:
        raise ValueError("order must be > 1")
    if q == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if q == 1:
        return order / (2 * sigma ** 2)
    if float(order).is_integer():
        log_a = _log_moment_int(q, sigma, int(order))
    else:
        log_a = _log_moment_frac(q, sigma, float(order))
    return max(log_a, 0.0) / (order - 1)


def rdp_curve(q: float, sigma: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    orders = tuple(float(a) for a in orders)
    return RdpCurve(orders, tuple(rdp_single_step(q, sigma, a) for a in orders))


def compose(curve: RdpCurve, steps: int) -> RdpCurve:
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return RdpCurve(curve.orders, tuple(0.0 for _ in curve.eps))
    return RdpCurve(curve.orders, tuple(steps * e for e in curve.eps))


def to_epsilon(curve: RdpCurve, delta: float) -> PrivacySpend:
    """Classical conversion ``min_a rdp(a) + log(1/delta)/(a-1)`` over the order grid."""
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    log_inv_delta = math.log(1 / delta)
    best, best_order = math.inf, curve.orders[0]
    for a, r in zip(curve.orders, curve.eps):
        eps = r + log_inv_delta / (a - 1)
        if eps < best:
            best, best_order = eps, a
    return PrivacySpend(max(best, 0.0), delta, best_order)


def epsilon(q: float, sigma: float, steps: int, delta: float, orders=DEFAULT_ORDERS) -> float:
    return to_epsilon(compose(rdp_curve(q, sigma, orders), steps), delta).epsilon


def calibrate_sigma(target_eps: float, delta: float, q: float, steps: int,
                    orders=DEFAULT_ORDERS, sigma_lo: float = 0.05, sigma_hi: float = 1e3,
                    rtol: float = 1e-3) -> float:
    """Smallest-found noise multiplier whose epsilon lands in ``[target*(1-rtol), target]``."""
    if not target_eps > 0:
        raise ValueError("target_eps must be > 0")

    def eps_at(s):
        return epsilon(q, s, steps, delta, orders)

    if eps_at(sigma_hi) > target_eps:
        raise PrivacyError(
            f"epsilon {target_eps} unreachable with sigma <= {sigma_hi} "
            f"(q={q}, steps={steps}, delta={delta})")
    lo, hi = sigma_lo, sigma_hi
    if eps_at(lo) <= target_eps:
        raise PrivacyError(f"epsilon {target_eps} already met at sigma={sigma_lo}; lower sigma_lo")
    # eps is nonincreasing in sigma; keep eps(lo) > target >= eps(hi)
    for _ in range(200):
        mid = math.sqrt(lo * hi) if hi / lo > 2 else 0.5 * (lo + hi)
        e = eps_at(mid)
        if e > target_eps:
            lo = mid
        else:
            hi = mid
            if e >= target_eps * (1 - rtol):
                return hi
    e = eps_at(hi)
    if e >= target_eps * (1 - rtol):
        return hi
    raise PrivacyError("sigma search failed to converge")


class RdpAccountant:
    """Running tally of subsampled-Gaussian steps at a fixed (q, sigma)."""

    def __init__(self, q: float, sigma: float, delta: float, orders=DEFAULT_ORDERS):
        self.delta = delta
        self.steps = 0
        self._one = rdp_curve(q, sigma, orders)

    def step(self, n: int = 1) -> None:
        self.steps += n

    @property
    def curve(self) -> RdpCurve:
        return compose(self._one, self.steps)

    def spend(self) -> PrivacySpend:
        return to_epsilon(self.curve, self.delta)
