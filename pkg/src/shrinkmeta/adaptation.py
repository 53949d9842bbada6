"""Task adaptation: MAP estimation of task parameters by proximal descent."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .models import Batch, TaskModel
from .prior import ContractError, MetaParams

OPTIMIZERS = ("prox_gd", "prox_adam", "gd", "adam")


class DivergedError(RuntimeError):
    """Adaptation produced a non-finite loss.  Carries the partial trace."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class TaskData:
    train: Batch
    val: Batch | None = None

    def __post_init__(self):
        if len(self.train) == 0:
            raise ContractError("task has an empty training split")

    def full(self) -> Batch:
        return self.train if self.val is None else self.train.concat(self.val)

    def to_json(self) -> dict:
        out = {"train": self.train.to_json()}
        if self.val is not None:
            out["val"] = self.val.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TaskData":
        val = obj.get("val")
        return cls(Batch.from_json(obj["train"]), None if val is None else Batch.from_json(val))


@dataclass(frozen=True)
class TraceRow:
    step: int
    train_loss: float
    val_loss: float | None
    grad_norm: float


@dataclass
class AdaptationResult:
    theta_hat: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)
    converged_grad_norm: float = float("nan")

    def val_curve(self) -> np.ndarray:
        return np.array([r.val_loss for r in self.trace], dtype=float)

    def to_csv(self, fh=None) -> str | None:
        """Write ``step,train_loss,val_loss,grad_norm`` rows."""
        own = fh is None
        if own:
            fh = io.StringIO()
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "train_loss", "val_loss", "grad_norm"])
        for r in self.trace:
            w.writerow([r.step, repr(r.train_loss), "" if r.val_loss is None else repr(r.val_loss),
                        repr(r.grad_norm)])
        return fh.getvalue() if own else None


def module_lambdas(meta: MetaParams) -> np.ndarray:
    return np.exp(-meta.log_sigma2)


def adapt(model: TaskModel, task: TaskData, meta: MetaParams, steps: int, step_size: float,
          optimizer: str = "prox_gd", *, lam: np.ndarray | float | None = None,
          mask: np.ndarray | None = None, data: str = "train", record_val: bool = False,
          schedule: str = "constant", adam_kw: dict | None = None) -> AdaptationResult:
    """Run ``steps`` optimizer steps on the training loss starting from ``phi``.

    ``lam`` overrides the per-module L2 strengths (default ``1/sigma2``); a
    scalar applies to every module.  Coordinates outside the boolean ``mask``
    stay at ``phi``.  ``data="all"`` adapts on train and validation together.
    The objective whose gradient norm is traced is the data loss plus the L2
    term.
    """
    if steps < 0:
        raise ContractError("steps must be non-negative")
    if optimizer not in OPTIMIZERS:
        raise ContractError(f"unknown optimizer {optimizer!r}")
    part = meta.partition
    if lam is None:
        lam_mod = module_lambdas(meta)
    else:
        lam_mod = np.broadcast_to(np.asarray(lam, dtype=float), (part.num_modules,))
    if optimizer in ("gd", "adam"):
        lam_mod = np.zeros(part.num_modules)
    lam_vec = part.expand(lam_mod)
    batch = task.full() if data == "all" else task.train
    if record_val and task.val is None:
        raise ContractError("record_val requires a validation split")
    phi = meta.phi
    frozen = None if mask is None else ~np.asarray(mask, dtype=bool)
    theta = phi.copy()
    state = optim.AdamState.zeros(part.dim, **(adam_kw or {}))
    trace: list[TraceRow] = []

    def record(k, loss, g):
        full_g = g + lam_vec * (theta - phi)
        if frozen is not None:
            full_g[frozen] = 0.0
        gn = float(np.sqrt(full_g @ full_g))
        val = model.loss(theta, task.val) if record_val else None
        trace.append(TraceRow(k, loss, val, gn))
        if not np.isfinite(loss):
            raise DivergedError(f"non-finite training loss at adaptation step {k}", trace)
        return gn

    cfg = optim.ProxConfig(step_size, lam_vec, phi)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            loss, g = model.loss_and_grad(theta, batch)
            record(k, loss, g)
            if frozen is not None:
                g = g.copy()
                g[frozen] = 0.0
            if schedule != "constant":
                cfg = optim.ProxConfig(optim.linear_decay(step_size, k, steps), lam_vec, phi)
            if optimizer in ("prox_gd", "gd"):
                theta = optim.prox_gd_step(theta, g, cfg)
            else:
                theta, state = optim.prox_adam_step(theta, g, state, cfg)
            if frozen is not None:
                theta[frozen] = phi[frozen]
        loss, g = model.loss_and_grad(theta, batch)
        gn = record(steps, loss, g)
    return AdaptationResult(theta, trace, gn)


def evaluate(model: TaskModel, theta: np.ndarray, batch: Batch) -> float:
    """Held-out loss of ``theta`` on ``batch``."""
    return model.loss(theta, batch)
