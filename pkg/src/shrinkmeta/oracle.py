"""Closed forms for the univariate hierarchical normal model.

Tasks draw ``theta_t ~ N(phi, sigma2)``, then ``N`` training and ``K``
validation points ``~ N(theta_t, 1)``.  Everything here works on the
per-task sample means, which are sufficient for the quantities involved.
Losses are the negative log-densities up to additive constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class NormalTaskStats:
    xbar: np.ndarray
    ybar: np.ndarray
    N: int
    K: int

    def __post_init__(self):
        object.__setattr__(self, "xbar", np.atleast_1d(np.asarray(self.xbar, dtype=float)))
        object.__setattr__(self, "ybar", np.atleast_1d(np.asarray(self.ybar, dtype=float)))
        if self.xbar.shape != self.ybar.shape or self.xbar.size < 1:
            raise DomainError("need matching, non-empty train and validation means")

    @property
    def T(self) -> int:
        return self.xbar.size

    @property
    def S(self) -> float:
        """Across-task (biased) sample variance of the training means."""
        return float(np.mean((self.xbar - self.xbar.mean()) ** 2))


def simulate_stats(T, N, K, phi_r, sigma2_r, rng: np.random.Generator) -> NormalTaskStats:
    """Exact draw of the per-task means under the generative model."""
    theta = phi_r + np.sqrt(sigma2_r) * rng.standard_normal(T)
    xbar = theta + rng.standard_normal(T) / np.sqrt(N)
    ybar = theta + rng.standard_normal(T) / np.sqrt(K)
    return NormalTaskStats(xbar, ybar, N, K)


def _check_sigma2(sigma2):
    if np.any(np.asarray(sigma2) <= 0):
        raise DomainError("sigma2 must be positive")


def oracle_theta_hat(xbar, phi, N, sigma2):
    """MAP of ``theta_t`` given its training mean."""
    _check_sigma2(sigma2)
    a = 1.0 / (N * sigma2)
    return (xbar + phi * a) / (1.0 + a)


def oracle_sigma2_pll_grad(stats: NormalTaskStats, phi, sigma2) -> float:
    """Derivative in ``sigma2`` of ``sum_t K/2 (ybar_t - theta_hat_t)^2``."""
    _check_sigma2(sigma2)
    N, K = stats.N, stats.K
    a = 1.0 / (N * sigma2)
    factor = K / (N * sigma2 ** 2 * (1.0 + a) ** 3)
    x, y = stats.xbar, stats.ybar
    return float(factor * np.sum((x - y + a * (phi - y)) * (x - phi)))


def oracle_sigma2_root(stats: NormalTaskStats, phi) -> float:
    """Stationary ``sigma2`` of the predictive loss for fixed ``phi``."""
    x, y = stats.xbar, stats.ybar
    num = np.mean((x - phi) * (y - phi))
    den = stats.N * np.mean((x - y) * (x - phi))
    if den == 0:
        raise DegenerateDataError("train and validation means coincide; no finite root")
    return float(num / den)


def oracle_phi_root(xbar_mean, ybar_mean, N, sigma2) -> float:
    """Stationary ``phi`` of the predictive loss for fixed ``sigma2``."""
    return float(ybar_mean + N * sigma2 * (ybar_mean - xbar_mean))


def oracle_phi_map(stats: NormalTaskStats) -> float:
    """Joint-MAP ``phi``: the mean of the training means, for every sigma2 > 0."""
    if stats.T < 1:
        raise DomainError("need at least one task")
    return float(stats.xbar.mean())


def oracle_phi_pll(stats: NormalTaskStats) -> float:
    """``phi`` solving both predictive-likelihood stationarity conditions."""
    x, y = stats.xbar, stats.ybar
    xm, ym = x.mean(), y.mean()
    c = np.mean(x * (x - y))
    xy = np.mean(x * y)
    den = xm * (ym - xm) + c
    if den == 0:
        raise DegenerateDataError("degenerate statistics")
    return float((c * ym + xy * (ym - xm)) / den)


def pll_estimates(stats: NormalTaskStats) -> tuple[float, float]:
    """``(phi, sigma2)`` from the predictive-likelihood roots."""
    phi = oracle_phi_pll(stats)
    return phi, oracle_sigma2_root(stats, phi)


def joint_map_estimates(stats: NormalTaskStats) -> tuple[float, float]:
    """``(phi, sigma2)`` with ``phi`` the joint MAP and ``sigma2`` the predictive root."""
    phi = oracle_phi_map(stats)
    return phi, oracle_sigma2_root(stats, phi)


@dataclass(frozen=True)
class JointSigma2Outcome:
    diverges_to_zero: bool
    root: float | None = None
    left_root: float | None = None


def oracle_joint_map_sigma2(S: float, N: int) -> JointSigma2Outcome:
    """Stationary points of the joint negative log-density in ``sigma2``.

    Roots of ``s^2 + (2/N - S) s + 1/N^2 = 0``.  Without real positive roots
    (``S < 4/N``) descent runs to zero.  Otherwise the right root is a local
    minimum and the left root bounds its basin from below.
    """
    if S < 0:
        raise DomainError("S must be non-negative")
    if S < 4.0 / N:
        return JointSigma2Outcome(True)
    disc = np.sqrt(S * (S - 4.0 / N))
    return JointSigma2Outcome(False, 0.5 * (S - 2.0 / N + disc), 0.5 * (S - 2.0 / N - disc))


def corollary_root_limit(sigma2_r: float, N: int) -> float:
    """Large-``T`` limit of the local-min root, where ``S -> sigma2_r + 1/N``."""
    return 0.5 * (sigma2_r - 1.0 / N + np.sqrt((sigma2_r + 1.0 / N) * (sigma2_r - 3.0 / N)))


def joint_nll(theta, phi, sigma2, stats_xbar, N) -> float:
    """``T/2 log s2 + sum (theta-phi)^2/(2 s2) + N/2 sum (xbar - theta)^2``.

    Equals the joint negative log-density up to a data-only constant.
    """
    theta = np.asarray(theta, dtype=float)
    xbar = np.asarray(stats_xbar, dtype=float)
    T = xbar.size
    return float(0.5 * T * np.log(sigma2) + 0.5 * np.sum((theta - phi) ** 2) / sigma2
                 + 0.5 * N * np.sum((xbar - theta) ** 2))


def joint_profile_grad(sigma2: float, xbar: np.ndarray, N: int) -> float:
    """Derivative in ``sigma2`` of the joint loss with ``theta, phi`` at their conditional MAP."""
    xbar = np.asarray(xbar, dtype=float)
    phi = xbar.mean()
    theta = oracle_theta_hat(xbar, phi, N, sigma2)
    return float(0.5 * xbar.size / sigma2 - 0.5 * np.sum((theta - phi) ** 2) / sigma2 ** 2)


def joint_sigma2_descent(xbar, N, sigma2_init, lr=0.05, steps=20000, floor=1e-12, tol=1e-15):
    """Gradient descent on ``log sigma2`` of the profiled joint loss.

    The gradient is divided by ``T`` and multiplied by ``sigma2`` (chain
    rule), so its sign matches the ``sigma2`` derivative everywhere.  Stops
    early once ``sigma2`` drops below ``floor`` or a step moves ``log sigma2``
    by less than ``tol``.  Returns the final sigma2.
    """
    xbar = np.asarray(xbar, dtype=float)
    T = xbar.size
    log_s2 = np.log(sigma2_init)
    for _ in range(steps):
        s2 = np.exp(log_s2)
        if s2 < floor:
            break
        delta = lr * joint_profile_grad(s2, xbar, N) * s2 / T
        log_s2 -= delta
        if abs(delta) < tol:
            break
    return float(np.exp(log_s2))


def xbar_with_variance(S: float, T: int = 2, center: float = 0.0) -> np.ndarray:
    """Training means with across-task variance exactly ``S`` (``T`` even)."""
    if T % 2:
        raise DomainError("T must be even")
    half = np.full(T // 2, np.sqrt(S))
    return center + np.concatenate([half, -half])
