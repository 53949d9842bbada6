"""Inner-loop optimizers with an exact L2 proximal shrink toward a center."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .prior import ContractError, ModulePartition


@dataclass(frozen=True)
class ProxConfig:
    """Step size, L2 strength and center of the proximal term.

    ``lam`` broadcasts against the parameter vector: a scalar, or one value
    per coordinate.  ``lam = 0`` means no shrinkage.
    """

    step_size: float | np.ndarray
    lam: float | np.ndarray
    center: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.step_size) < 0):
            raise ContractError("step size must be non-negative")
        if np.any(np.asarray(self.lam) < 0):
            raise ContractError("L2 strengths must be non-negative")

    @classmethod
    def from_modules(cls, step_size, lambda_per_module, center, partition: ModulePartition):
        return cls(step_size, partition.expand(lambda_per_module), np.asarray(center, dtype=float))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, **kw) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0, **kw)


def gd_step(theta, grad, step_size):
    return theta - step_size * grad


def prox_shrink(theta_half, cfg: ProxConfig, scale=1.0):
    """``(theta_half - c) / (1 + lam * step * scale) + c``."""
    c = cfg.center
    shrink = cfg.lam * cfg.step_size * scale
    out = (theta_half - c) / (1.0 + shrink) + c
    # lam = 0 must be an exact no-op, not a round trip through (x - c) + c
    return np.where(shrink == 0, theta_half, out)


def prox_gd_step(theta, grad, cfg: ProxConfig):
    """One proximal gradient step on ``f(theta) + lam/2 |theta - center|^2``."""
    return prox_shrink(theta - cfg.step_size * grad, cfg)


def adam_step(theta, grad, state: AdamState, step_size):
    """Bias-corrected Adam.  Returns ``(theta_new, state_new, v_hat)``."""
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    theta_new = theta - step_size * m_hat / (np.sqrt(v_hat) + state.eps)
    return theta_new, replace(state, m=m, v=v, t=t), v_hat


def prox_adam_shrink(theta_half, v_hat, cfg: ProxConfig, eps: float):
    return prox_shrink(theta_half, cfg, scale=1.0 / np.sqrt(v_hat + eps))


def prox_adam_step(theta, grad, state: AdamState, cfg: ProxConfig):
    """Adam step followed by a shrink scaled by the updated second moment."""
    theta_half, state, v_hat = adam_step(theta, grad, state, cfg.step_size)
    return prox_adam_shrink(theta_half, v_hat, cfg, state.eps), state


def linear_decay(step_size: float, k: int, total: int, final_frac: float = 0.0) -> float:
    """Linearly anneal from ``step_size`` at ``k = 0`` to ``final_frac * step_size`` at ``total``."""
    if total <= 0:
        return step_size
    frac = min(max(k / total, 0.0), 1.0)
    return step_size * (1.0 - (1.0 - final_frac) * frac)
