"""Per-task meta-gradient engines.

Implicit engines (sigma-iMAML, sigma-Reptile, iMAML) differentiate the
stationarity condition of the adapted task parameters.  Unrolled engines
(sigma-MAML, MAML, Meta-SGD) reverse-differentiate through the inner loop,
using Hessian-vector products from the task model.

All sigma^2 gradients are taken with respect to ``log sigma2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptationResult, TaskData
from .cg import CGConfig, cg_solve, module_preconditioner
from .models import TaskModel
from .prior import ContractError, MetaParams

UNROLL_BUDGET = 100
STATIONARITY_RTOL = 1e-3


class UnrollBudgetError(ContractError):
    pass


@dataclass
class MetaGradient:
    d_phi: np.ndarray
    d_log_sigma2: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    d_alpha: np.ndarray | None = None

    def is_finite(self) -> bool:
        ok = np.all(np.isfinite(self.d_phi)) and np.all(np.isfinite(self.d_log_sigma2))
        return bool(ok and (self.d_alpha is None or np.all(np.isfinite(self.d_alpha))))


def cross_hessian_blocks(theta: np.ndarray, meta: MetaParams):
    """Mixed second derivatives of the training objective at ``theta``.

    Returns ``(h_theta_phi, h_theta_logs2)``.  The first is the diagonal of
    the (diagonal) block ``d2/dtheta dphi``; the second is a per-coordinate
    vector whose entries in module ``m`` form the column ``d2/dtheta dlog s2_m``.
    """
    prec = meta.precision_per_coord()
    return -prec, -(theta - meta.phi) * prec


def cross_hessian_dense(theta: np.ndarray, meta: MetaParams):
    """Dense ``(D, D)`` and ``(D, M)`` forms of :func:`cross_hessian_blocks`."""
    h_phi, h_s = cross_hessian_blocks(theta, meta)
    part = meta.partition
    cols = np.zeros((part.dim, part.num_modules))
    cols[np.arange(part.dim), part.module_index] = h_s
    return np.diag(h_phi), cols


def _stationarity(adaptation: AdaptationResult) -> dict:
    diag = {"grad_norm": adaptation.converged_grad_norm}
    if adaptation.trace:
        limit = STATIONARITY_RTOL * (1.0 + adaptation.trace[0].grad_norm)
        if adaptation.converged_grad_norm > limit:
            diag["warning"] = (f"adapted parameters not stationary: |grad| = "
                               f"{adaptation.converged_grad_norm:.3e} > {limit:.3e}")
    return diag


def _implicit_solve(model, task, meta, theta, cg: CGConfig, precondition=True):
    """Solve ``(damping I + Sigma^-1 + H_data) v = grad l_val(theta)``."""
    if task.val is None:
        raise ContractError("implicit meta-gradients need a validation split")
    val_loss, g_val = model.loss_and_grad(theta, task.val)
    diag = {"val_loss": val_loss, "cg_iters": 0, "cg_residual": 0.0}
    if not np.any(g_val):
        return np.zeros_like(theta), diag
    prec = meta.precision_per_coord()
    cfg = cg
    if precondition and cg.preconditioner is None:
        cfg = CGConfig(cg.max_iters, cg.tol, cg.damping, module_preconditioner(meta))

    def apply_a(v):
        return model.hvp(theta, task.train, v) + prec * v

    v, res, iters = cg_solve(apply_a, g_val, cfg)
    diag["cg_iters"], diag["cg_residual"] = iters, res
    return v, diag


def sigma_imaml_meta_grad(model: TaskModel, task: TaskData, meta: MetaParams,
                          adaptation: AdaptationResult, cg: CGConfig,
                          precondition: bool = True) -> MetaGradient:
    """Implicit gradient of the validation loss in ``(phi, log sigma2)``."""
    theta = adaptation.theta_hat
    v, diag = _implicit_solve(model, task, meta, theta, cg, precondition)
    diag.update(_stationarity(adaptation))
    prec = meta.precision_per_coord()
    d_phi = v * prec
    d_log_s2 = meta.partition.reduce(v * (theta - meta.phi) * prec)
    return MetaGradient(d_phi, d_log_s2, diag)


def sigma_reptile_meta_grad(model: TaskModel, task: TaskData, meta: MetaParams,
                            adaptation: AdaptationResult, cg: CGConfig,
                            phi_adaptation: AdaptationResult | None = None,
                            precondition: bool = True) -> MetaGradient:
    """Joint-MAP update for ``phi`` and an implicit gradient for ``log sigma2``.

    ``adaptation`` must be fit on the training split; ``phi_adaptation``
    (default: the same result) supplies the task parameters that ``phi`` is
    pulled toward, typically fit on the full task data.
    """
    theta = adaptation.theta_hat
    anchor = adaptation if phi_adaptation is None else phi_adaptation
    prec = meta.precision_per_coord()
    d_phi = (meta.phi - anchor.theta_hat) * prec
    v, diag = _implicit_solve(model, task, meta, theta, cg, precondition)
    diag.update(_stationarity(adaptation))
    d_log_s2 = meta.partition.reduce(v * (theta - meta.phi) * prec)
    return MetaGradient(d_phi, d_log_s2, diag)


def imaml_meta_grad(model: TaskModel, task: TaskData, lam: float,
                    adaptation: AdaptationResult, cg: CGConfig) -> MetaGradient:
    """``((1 + d) I + H / lam)^-1 grad l_val`` with ``d = cg.damping``."""
    if lam <= 0:
        raise ContractError("lambda must be positive")
    theta = adaptation.theta_hat
    val_loss, g_val = model.loss_and_grad(theta, task.val)
    diag = {"val_loss": val_loss, "cg_iters": 0, "cg_residual": 0.0}
    diag.update(_stationarity(adaptation))
    if not np.any(g_val):
        return MetaGradient(np.zeros_like(theta), np.zeros(0), diag)
    cfg = CGConfig(cg.max_iters, cg.tol, 0.0, cg.preconditioner)

    def apply_a(v):
        return (1.0 + cg.damping) * v + model.hvp(theta, task.train, v) / lam

    x, res, iters = cg_solve(apply_a, g_val, cfg)
    diag["cg_iters"], diag["cg_residual"] = iters, res
    return MetaGradient(x, np.zeros(0), diag)


def reptile_meta_grad(adaptation: AdaptationResult, phi: np.ndarray) -> MetaGradient:
    return MetaGradient(np.asarray(phi) - adaptation.theta_hat, np.zeros(0))


def _check_unroll(steps, budget):
    if steps < 0:
        raise ContractError("steps must be non-negative")
    if steps > budget:
        raise UnrollBudgetError(f"{steps} unrolled steps exceed the budget of {budget}")


def sigma_maml_meta_grad(model: TaskModel, task: TaskData, meta: MetaParams, steps: int,
                         step_size: float, optimizer: str = "prox_gd",
                         unroll_budget: int = UNROLL_BUDGET) -> MetaGradient:
    """Reverse-mode gradient through ``steps`` proximal GD steps.

    Memory is ``O(steps * D)``.  Only ``prox_gd`` is differentiable here.
    """
    _check_unroll(steps, unroll_budget)
    if optimizer != "prox_gd":
        raise ContractError("unrolled engines support only prox_gd")
    part = meta.partition
    phi = meta.phi
    shrink = 1.0 / (1.0 + step_size * meta.precision_per_coord())
    thetas = [phi.copy()]
    theta = phi.copy()
    for _ in range(steps):
        loss, g = model.loss_and_grad(theta, task.train)
        theta = shrink * (theta - step_size * g - phi) + phi
        thetas.append(theta)
    val_loss, adj = model.loss_and_grad(theta, task.val)
    d_phi = np.zeros_like(phi)
    d_s = np.zeros(part.dim)
    dshrink = shrink * (1.0 - shrink)
    for k in range(steps - 1, -1, -1):
        half_minus_phi = (thetas[k + 1] - phi) / shrink
        d_phi += (1.0 - shrink) * adj
        d_s += adj * half_minus_phi * dshrink
        u = shrink * adj
        adj = u - step_size * model.hvp(thetas[k], task.train, u)
    d_phi += adj
    diag = {"val_loss": val_loss, "train_loss": model.loss(theta, task.train), "unrolled_steps": steps}
    return MetaGradient(d_phi, part.reduce(d_s), diag)


def maml_meta_grad(model: TaskModel, task: TaskData, phi: np.ndarray, steps: int,
                   step_size: float, unroll_budget: int = UNROLL_BUDGET) -> MetaGradient:
    """Gradient of the validation loss through ``steps`` plain GD steps."""
    _check_unroll(steps, unroll_budget)
    thetas = [np.asarray(phi, dtype=float)]
    for _ in range(steps):
        thetas.append(thetas[-1] - step_size * model.grad(thetas[-1], task.train))
    val_loss, adj = model.loss_and_grad(thetas[-1], task.val)
    for k in range(steps - 1, -1, -1):
        adj = adj - step_size * model.hvp(thetas[k], task.train, adj)
    diag = {"val_loss": val_loss, "train_loss": model.loss(thetas[-1], task.train),
            "unrolled_steps": steps}
    return MetaGradient(adj, np.zeros(0), diag)


def metasgd_meta_grad(model: TaskModel, task: TaskData, phi: np.ndarray,
                      alphas_per_module: np.ndarray, partition, steps: int,
                      unroll_budget: int = UNROLL_BUDGET) -> MetaGradient:
    """Gradients of the validation loss in ``phi`` and per-module step sizes."""
    _check_unroll(steps, unroll_budget)
    alpha = partition.expand(alphas_per_module)
    thetas = [np.asarray(phi, dtype=float)]
    grads = []
    for _ in range(steps):
        g = model.grad(thetas[-1], task.train)
        grads.append(g)
        thetas.append(thetas[-1] - alpha * g)
    val_loss, adj = model.loss_and_grad(thetas[-1], task.val)
    d_alpha = np.zeros(partition.dim)
    for k in range(steps - 1, -1, -1):
        d_alpha -= adj * grads[k]
        adj = adj - model.hvp(thetas[k], task.train, alpha * adj)
    diag = {"val_loss": val_loss, "train_loss": model.loss(thetas[-1], task.train),
            "unrolled_steps": steps}
    return MetaGradient(adj, np.zeros(0), diag, d_alpha=partition.reduce(d_alpha))
