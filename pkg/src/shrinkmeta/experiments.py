"""Preset configurations for the desk-scale experiments.

The acceptance suite and the scripts in ``scripts/`` both read these, so a
setting changed here changes every consumer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discovery import eval_masked_adaptation
from .driver import (ExperimentConfig, held_out_tasks, make_problem, meta_test, meta_train)
from .oracle import NormalTaskStats
from .prior import MetaParams


def example1_config(seed: int = 0) -> ExperimentConfig:
    """sigma-iMAML on a fixed pool of univariate normal tasks.

    One proximal step with rate ``1/N`` lands exactly on the task MAP.  The
    phi gradient is weak relative to its noise, so plain SGD with a decaying
    rate is used instead of Adam.
    """
    return ExperimentConfig(
        algorithm="sigma-imaml", task={"kind": "example1", "T": 20000}, pool_size=20000,
        meta_steps=2000, batch_size=100, meta_optimizer="sgd", lr_phi=10.0, lr_log_sigma2=1.0,
        meta_lr_decay=True, inner_lr=0.2, inner_steps=1, cg_iters=5, beta=0.0, seed=seed)


def pool_stats(cfg: ExperimentConfig) -> NormalTaskStats:
    """Sufficient statistics of a univariate training pool, for the closed forms."""
    problem = make_problem(cfg)
    tasks = [problem.task(cfg.seed, i) for i in range(cfg.pool_size)]
    xbar = np.array([t.train.x.mean() for t in tasks])
    ybar = np.array([t.val.x.mean() for t in tasks])
    return NormalTaskStats(xbar, ybar, len(tasks[0].train), len(tasks[0].val))


def experiment1_configs(seed: int = 0) -> dict[str, ExperimentConfig]:
    """sigma-Reptile and a single-rate MAML baseline on the linear-transform tasks."""
    task = {"kind": "experiment1", "n_train": 1, "n_val": 1}
    common = dict(task=task, meta_steps=300, batch_size=10, lr_phi=0.05, lr_log_sigma2=0.05,
                  meta_lr_decay=True, inner_lr=0.3, cg_iters=10, beta=0.0, init_log_sigma2=1.0,
                  test_steps=200, test_tasks=300, seed=seed)
    return {
        "sigma-reptile": ExperimentConfig(algorithm="sigma-reptile", inner_steps=200, **common),
        "maml": ExperimentConfig(algorithm="maml", inner_steps=20, **common),
    }


def sinusoid_config(seed: int = 0, meta_steps: int = 20000) -> ExperimentConfig:
    """sigma-iMAML on sinusoid regression.

    The inverse-gamma penalty is weighted 1e-2 rather than by beta itself.  At
    weight 1e-5 it never acts, and the noisy log-variance gradients let the
    output layer grow as large as the input layer.
    """
    return ExperimentConfig(
        algorithm="sigma-imaml", task={"kind": "sinusoid"}, meta_steps=meta_steps, batch_size=5,
        lr_phi=5.7e-3, lr_log_sigma2=1.8e-3, inner_lr=3.9e-4, inner_steps=100, cg_iters=1,
        damping=0.5, beta=1e-5, ig_weight=1e-2, test_steps=100, test_tasks=100, seed=seed)


@dataclass
class HeldOutCurve:
    meta: MetaParams
    curve: np.ndarray

    @property
    def overfit_ratio(self) -> float:
        """Final loss over the trajectory minimum."""
        return float(self.curve[-1] / self.curve.min())


def train_and_test(cfg: ExperimentConfig) -> HeldOutCurve:
    """Meta-train, then average validation trajectories over held-out tasks."""
    _, ckpt = meta_train(cfg)
    problem = make_problem(cfg)
    tasks = held_out_tasks(cfg, cfg.test_tasks, problem)
    curves = meta_test(cfg, ckpt.meta, tasks, cfg.test_steps, problem)
    return HeldOutCurve(ckpt.meta, curves.mean(axis=0))


def masked_vs_full(cfg: ExperimentConfig, meta: MetaParams, modules) -> tuple[float, float]:
    """Mean held-out loss adapting only ``modules`` and adapting every module."""
    problem = make_problem(cfg)
    tasks = held_out_tasks(cfg, cfg.test_tasks, problem)
    kw = dict(step_size=cfg.inner_lr, optimizer=cfg.inner_optimizer)
    masked = eval_masked_adaptation(problem.model, tasks, meta, modules, cfg.test_steps, **kw)
    full = eval_masked_adaptation(problem.model, tasks, meta, meta.partition.names, cfg.test_steps, **kw)
    return float(masked.mean()), float(full.mean())
