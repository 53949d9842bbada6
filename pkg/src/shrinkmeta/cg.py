"""Preconditioned conjugate gradients for damped Hessian systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .prior import ContractError, MetaParams


class IndefiniteError(ArithmeticError):
    """CG met non-positive curvature or non-finite values."""

    def __init__(self, msg, iteration):
        super().__init__(msg)
        self.iteration = iteration


@dataclass(frozen=True)
class CGConfig:
    """``max_iters`` defaults to a short budget suited to meta-training.

    ``preconditioner`` is a per-coordinate diagonal approximating the system
    matrix; ``None`` means identity.
    """

    max_iters: int = 5
    tol: float = 1e-10
    damping: float = 0.0
    preconditioner: np.ndarray | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ContractError("tol must be positive")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")
        if self.damping < 0:
            raise ContractError("damping must be non-negative")


def cg_solve(apply_A: Callable[[np.ndarray], np.ndarray], b: np.ndarray, cfg: CGConfig):
    """Solve ``(A + damping I) x = b``.

    Returns ``(x, rel_residual, iters)`` where the residual is the recurrence
    estimate ``|r| / |b|`` of the returned iterate.  If the tolerance is not
    met the iterate with the smallest residual is returned.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, 0.0, 0
    if not np.isfinite(bnorm):
        raise IndefiniteError("non-finite right-hand side", 0)
    d = cfg.damping
    minv = None if cfg.preconditioner is None else 1.0 / np.asarray(cfg.preconditioner, dtype=float)

    def matvec(p):
        out = apply_A(p)
        return out + d * p if d else out

    r = b.copy()
    z = r if minv is None else minv * r
    p = z.copy()
    rz = r @ z
    best_x, best_res = x, 1.0
    for k in range(1, cfg.max_iters + 1):
        ap = matvec(p)
        curv = p @ ap
        if not np.isfinite(curv):
            raise IndefiniteError(f"non-finite curvature at CG iteration {k}", k)
        if curv <= 0:
            raise IndefiniteError(f"non-positive curvature {curv:.3e} at CG iteration {k}", k)
        step = rz / curv
        x = x + step * p
        r = r - step * ap
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x, res
        if res <= cfg.tol:
            return x, float(res), k
        z = r if minv is None else minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, float(best_res), cfg.max_iters


def module_preconditioner(meta: MetaParams) -> np.ndarray:
    """Diagonal ``p_m = max(1 / (1000 sigma2_m), 1)`` per coordinate."""
    p = np.maximum(np.exp(-meta.log_sigma2) / 1e3, 1.0)
    return meta.partition.expand(p)
