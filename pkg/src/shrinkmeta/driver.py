"""Meta-training loop, meta-testing and run persistence."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metagrad as mg
from . import optim
from .adaptation import TaskData, adapt
from .cg import CGConfig
from .models import SinusoidMLP
from .prior import ContractError, MetaParams, clip_sigma2, ig_regularizer
from .taskgen import (STREAM_INIT, STREAM_META, HierNormalSpec, hier_normal_task,
                      sinusoid_task, spec_from_json, task_rng)

log = logging.getLogger(__name__)

ALGORITHMS = ("sigma-imaml", "sigma-reptile", "sigma-maml", "imaml", "reptile", "maml", "meta-sgd")
LEARNS_SIGMA = ("sigma-imaml", "sigma-reptile", "sigma-maml")
UNROLLED = ("sigma-maml", "maml", "meta-sgd")
TEST_INDEX_OFFSET = 10 ** 9


class MetaTrainingError(RuntimeError):
    """Meta-training stopped; ``last_good`` holds the last finite state."""

    def __init__(self, msg, step, last_good):
        super().__init__(msg)
        self.step = step
        self.last_good = last_good


@dataclass
class ExperimentConfig:
    algorithm: str = "sigma-imaml"
    task: dict = field(default_factory=lambda: {"kind": "example1"})
    hidden: int = 40
    # None: a fresh task per draw; otherwise tasks are drawn from indices [0, pool_size)
    pool_size: int | None = None
    meta_steps: int = 1000
    batch_size: int = 5
    meta_optimizer: str = "adam"
    lr_phi: float = 1e-3
    lr_log_sigma2: float = 1e-3
    lr_alpha: float = 1e-3
    meta_lr_decay: bool = False
    inner_optimizer: str = "prox_gd"
    inner_lr: float = 0.1
    inner_steps: int = 100
    cg_iters: int = 5
    cg_tol: float = 1e-10
    damping: float = 0.0
    precondition: bool = True
    beta: float = 1e-5
    # weight on the inverse-Gamma penalty; None means use beta
    ig_weight: float | None = None
    init_log_sigma2: float = 0.0
    init_phi: float | None = None
    init_alpha: float | None = None
    imaml_lambda: float = 1.0
    reptile_full_data: bool = True
    unroll_budget: int = mg.UNROLL_BUDGET
    test_steps: int = 100
    test_tasks: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}")
        if self.meta_steps < 0 or self.batch_size < 1 or self.inner_steps < 0:
            raise ContractError("step counts must be non-negative and batch size positive")
        for name in ("lr_phi", "lr_log_sigma2", "lr_alpha", "inner_lr"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.algorithm in UNROLLED and self.inner_steps > self.unroll_budget:
            raise ContractError(f"{self.algorithm} unrolls {self.inner_steps} steps, "
                                f"budget is {self.unroll_budget}")

    @classmethod
    def from_json(cls, obj: dict | str | Path) -> "ExperimentConfig":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def reg_weight(self) -> float:
        return self.beta if self.ig_weight is None else self.ig_weight


@dataclass
class Problem:
    """Model plus a way to fetch task ``i``."""

    model: object
    spec: object

    def task(self, seed: int, index: int) -> TaskData:
        if isinstance(self.spec, HierNormalSpec):
            return hier_normal_task(self.spec, seed, index, self.model)[0]
        return sinusoid_task(self.spec, seed, index)[0]


def make_problem(cfg: ExperimentConfig) -> Problem:
    spec = spec_from_json(cfg.task)
    model = spec.model() if isinstance(spec, HierNormalSpec) else SinusoidMLP(cfg.hidden)
    return Problem(model, spec)


def init_meta(cfg: ExperimentConfig, problem: Problem) -> MetaParams:
    model = problem.model
    if cfg.init_phi is not None:
        phi = np.full(model.dim, float(cfg.init_phi))
    elif isinstance(model, SinusoidMLP):
        phi = model.init_params(task_rng(cfg.seed, STREAM_INIT, 0))
    else:
        phi = np.zeros(model.dim)
    meta = MetaParams(phi, np.full(model.partition.num_modules, cfg.init_log_sigma2), model.partition)
    if cfg.algorithm == "meta-sgd":
        a0 = cfg.inner_lr if cfg.init_alpha is None else cfg.init_alpha
        meta.alpha = np.full(model.partition.num_modules, float(a0))
    return meta


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("SHRINKMETA_THREADS", "1")))
    except ValueError:
        return 1


def _cg(cfg: ExperimentConfig) -> CGConfig:
    return CGConfig(cfg.cg_iters, cfg.cg_tol, cfg.damping)


def task_meta_gradient(cfg: ExperimentConfig, model, task: TaskData, meta: MetaParams):
    """Meta-gradient of one task plus its final training loss."""
    alg = cfg.algorithm
    if alg in ("sigma-imaml", "sigma-reptile", "imaml"):
        lam = cfg.imaml_lambda if alg == "imaml" else None
        res = adapt(model, task, meta, cfg.inner_steps, cfg.inner_lr, cfg.inner_optimizer, lam=lam)
        train_loss = res.trace[-1].train_loss
        if alg == "sigma-imaml":
            g = mg.sigma_imaml_meta_grad(model, task, meta, res, _cg(cfg), cfg.precondition)
        elif alg == "imaml":
            g = mg.imaml_meta_grad(model, task, cfg.imaml_lambda, res, _cg(cfg))
        else:
            anchor = None
            if cfg.reptile_full_data:
                anchor = adapt(model, task, meta, cfg.inner_steps, cfg.inner_lr,
                               cfg.inner_optimizer, data="all")
            g = mg.sigma_reptile_meta_grad(model, task, meta, res, _cg(cfg), anchor, cfg.precondition)
        return g, train_loss
    if alg == "reptile":
        opt = "adam" if cfg.inner_optimizer in ("adam", "prox_adam") else "gd"
        res = adapt(model, task, meta, cfg.inner_steps, cfg.inner_lr, opt, data="all")
        g = mg.reptile_meta_grad(res, meta.phi)
        return g, res.trace[-1].train_loss
    if alg == "sigma-maml":
        g = mg.sigma_maml_meta_grad(model, task, meta, cfg.inner_steps, cfg.inner_lr,
                                    cfg.inner_optimizer, cfg.unroll_budget)
    elif alg == "maml":
        g = mg.maml_meta_grad(model, task, meta.phi, cfg.inner_steps, cfg.inner_lr, cfg.unroll_budget)
    else:
        g = mg.metasgd_meta_grad(model, task, meta.phi, meta.alpha, meta.partition,
                                 cfg.inner_steps, cfg.unroll_budget)
    return g, g.diagnostics.get("train_loss", float("nan"))


class MetaOptimizer:
    """Adam or SGD over the concatenated meta-parameter vector."""

    def __init__(self, kind: str, lrs: np.ndarray, state: optim.AdamState | None = None):
        if kind not in ("adam", "sgd", "sgd_sigma2"):
            raise ContractError(f"unknown meta optimizer {kind!r}")
        self.kind = kind
        self.lrs = lrs
        self.state = state or optim.AdamState.zeros(len(lrs))

    def step(self, params, grads, scale=1.0, lr_mult=None):
        lrs = self.lrs * scale if lr_mult is None else self.lrs * scale * lr_mult
        if self.kind == "adam":
            new, self.state, _ = optim.adam_step(params, grads, self.state, lrs)
            return new
        return params - lrs * grads


def _pack(meta: MetaParams):
    parts = [meta.phi, meta.log_sigma2]
    if meta.alpha is not None:
        parts.append(meta.alpha)
    return np.concatenate(parts)


def _unpack(meta: MetaParams, vec) -> MetaParams:
    out = meta.copy()
    d, m = meta.partition.dim, meta.partition.num_modules
    out.phi = vec[:d].copy()
    out.log_sigma2 = vec[d:d + m].copy()
    if meta.alpha is not None:
        out.alpha = np.maximum(vec[d + m:], 0.0)
    return out


def _lr_vector(cfg: ExperimentConfig, meta: MetaParams) -> np.ndarray:
    d, m = meta.partition.dim, meta.partition.num_modules
    parts = [np.full(d, cfg.lr_phi), np.full(m, cfg.lr_log_sigma2)]
    if meta.alpha is not None:
        parts.append(np.full(m, cfg.lr_alpha))
    return np.concatenate(parts)


@dataclass
class RunRecord:
    config: dict
    rows: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    meta: MetaParams | None = None
    seed: int = 0

    def metrics_csv(self) -> str:
        if not self.rows:
            names = [] if self.meta is None else self.meta.partition.names
            header = _metric_columns(names)
            return ",".join(header) + "\n"
        header = list(self.rows[0].keys())
        lines = [",".join(header)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[h]) for h in header))
        return "\n".join(lines) + "\n"


def _metric_columns(names):
    return (["step", "mean_train_loss", "mean_val_loss"] + [f"sigma2_{n}" for n in names]
            + ["grad_norm_phi", "grad_norm_logsigma2"])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class Checkpoint:
    step: int
    meta: MetaParams
    opt_state: optim.AdamState

    def to_json(self) -> dict:
        s = self.opt_state
        return {"step": self.step, "meta": self.meta.to_json(),
                "adam": {"m": s.m.tolist(), "v": s.v.tolist(), "t": s.t}}

    @classmethod
    def from_json(cls, obj: dict) -> "Checkpoint":
        a = obj["adam"]
        state = optim.AdamState(np.array(a["m"], dtype=float), np.array(a["v"], dtype=float), int(a["t"]))
        return cls(int(obj["step"]), MetaParams.from_json(obj["meta"]), state)


def sample_indices(cfg: ExperimentConfig, step: int) -> list[int]:
    if cfg.pool_size is None:
        return [step * cfg.batch_size + b for b in range(cfg.batch_size)]
    rng = task_rng(cfg.seed, STREAM_META, step)
    return rng.integers(0, cfg.pool_size, size=cfg.batch_size).tolist()


def meta_train(cfg: ExperimentConfig, resume: Checkpoint | None = None,
               stop_at: int | None = None, problem: Problem | None = None):
    """Run meta-training.  Returns ``(RunRecord, Checkpoint)``.

    ``stop_at`` ends the loop early (for checkpointing); the learning-rate
    schedule still refers to ``cfg.meta_steps``.
    """
    problem = problem or make_problem(cfg)
    model = problem.model
    if resume is None:
        meta = init_meta(cfg, problem)
        opt = MetaOptimizer(cfg.meta_optimizer, _lr_vector(cfg, meta))
        start = 0
    else:
        meta = resume.meta.copy()
        opt = MetaOptimizer(cfg.meta_optimizer, _lr_vector(cfg, meta), resume.opt_state)
        start = resume.step
    end = cfg.meta_steps if stop_at is None else min(stop_at, cfg.meta_steps)
    record = RunRecord(cfg.to_json(), seed=cfg.seed)
    learns_sigma = cfg.algorithm in LEARNS_SIGMA
    threads = n_threads()
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for step in range(start, end):
            t0 = time.perf_counter()
            tasks = [problem.task(cfg.seed, i) for i in sample_indices(cfg, step)]

            def work(task, meta=meta):
                return task_meta_gradient(cfg, model, task, meta)

            try:
                results = list(pool.map(work, tasks)) if pool else [work(t) for t in tasks]
            except Exception as exc:
                raise MetaTrainingError(f"meta step {step}: {exc}", step,
                                        Checkpoint(step, meta, opt.state)) from exc
            B = len(results)
            d_phi = sum(g.d_phi for g, _ in results) / B
            grads = [d_phi]
            d_log = np.zeros(meta.partition.num_modules)
            if learns_sigma:
                d_log = sum(g.d_log_sigma2 for g, _ in results) / B
                if cfg.reg_weight:
                    d_log = d_log + cfg.reg_weight * ig_regularizer(meta, cfg.beta)[1]
            grads.append(d_log)
            if meta.alpha is not None:
                grads.append(sum(g.d_alpha for g, _ in results) / B)
            scale = optim.linear_decay(1.0, step, cfg.meta_steps) if cfg.meta_lr_decay else 1.0
            lr_mult = None
            if cfg.meta_optimizer == "sgd_sigma2":
                lr_mult = np.ones(len(opt.lrs))
                lr_mult[: meta.partition.dim] = meta.sigma2_per_coord()
            new_meta = _unpack(meta, opt.step(_pack(meta), np.concatenate(grads), scale, lr_mult))
            if learns_sigma:
                new_meta = clip_sigma2(new_meta)
            if not new_meta.is_finite():
                raise MetaTrainingError(f"non-finite meta parameters after step {step}", step,
                                        Checkpoint(step, meta, opt.state))
            meta = new_meta
            row = {"step": step + 1,
                   "mean_train_loss": float(np.mean([tl for _, tl in results])),
                   "mean_val_loss": float(np.mean([g.diagnostics.get("val_loss", np.nan)
                                                   for g, _ in results]))}
            for name, s2 in zip(meta.partition.names, meta.sigma2):
                row[f"sigma2_{name}"] = float(s2)
            row["grad_norm_phi"] = float(np.linalg.norm(d_phi))
            row["grad_norm_logsigma2"] = float(np.linalg.norm(d_log))
            record.rows.append(row)
            record.diagnostics.append({"step": step + 1, "tasks": [_jsonable(g.diagnostics)
                                                                   for g, _ in results]})
            record.wall_time.append(time.perf_counter() - t0)
    finally:
        if pool:
            pool.shutdown()
    record.meta = meta
    return record, Checkpoint(end, meta, opt.state)


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[k] = v
    return out


def held_out_adapt_kwargs(cfg: ExperimentConfig, meta: MetaParams) -> dict:
    """Adaptation settings used on held-out tasks for each algorithm."""
    alg = cfg.algorithm
    if alg in LEARNS_SIGMA:
        return {"step_size": cfg.inner_lr, "optimizer": cfg.inner_optimizer}
    if alg == "imaml":
        return {"step_size": cfg.inner_lr, "optimizer": cfg.inner_optimizer, "lam": cfg.imaml_lambda}
    if alg == "meta-sgd":
        return {"step_size": meta.partition.expand(meta.alpha), "optimizer": "gd"}
    opt = "adam" if cfg.inner_optimizer in ("adam", "prox_adam") else "gd"
    return {"step_size": cfg.inner_lr, "optimizer": opt}


def meta_test(cfg: ExperimentConfig, meta: MetaParams, tasks: list[TaskData], steps: int,
              problem: Problem | None = None) -> np.ndarray:
    """Validation-loss trajectories, shape ``(len(tasks), steps + 1)``."""
    if not meta.is_finite():
        raise ContractError("meta parameters are not finite")
    problem = problem or make_problem(cfg)
    kw = held_out_adapt_kwargs(cfg, meta)
    out = []
    for task in tasks:
        res = adapt(problem.model, task, meta, steps, record_val=True, **kw)
        out.append(res.val_curve())
    return np.array(out)


def held_out_tasks(cfg: ExperimentConfig, count: int, problem: Problem | None = None):
    problem = problem or make_problem(cfg)
    return [problem.task(cfg.seed, TEST_INDEX_OFFSET + i) for i in range(count)]


# run directory layout

def write_run(out: Path, record: RunRecord, ckpt: Checkpoint, append: bool = False):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    text = record.metrics_csv()
    if append and metrics.exists():
        text = "".join(text.splitlines(keepends=True)[1:])
        with metrics.open("a") as fh:
            fh.write(text)
    else:
        metrics.write_text(text)
    (out / "meta_params.json").write_text(json.dumps(record.meta.to_json(), indent=1))
    (out / "config.json").write_text(json.dumps(record.config, indent=1))
    (out / "checkpoint.json").write_text(json.dumps(ckpt.to_json()))
    mode = "a" if append else "w"
    with (out / "diagnostics.jsonl").open(mode) as fh:
        for d in record.diagnostics:
            fh.write(json.dumps(d) + "\n")
    report = {
        "algorithm": record.config["algorithm"],
        "seed": record.seed,
        "meta_steps_completed": ckpt.step,
        "final_sigma2": dict(zip(record.meta.partition.names, record.meta.sigma2.tolist())),
        "wall_time_s": float(np.sum(record.wall_time)),
        "config": record.config,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))


def load_run(run_dir: Path):
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_json(run_dir / "config.json")
    meta = MetaParams.from_json(json.loads((run_dir / "meta_params.json").read_text()))
    return cfg, meta


def load_checkpoint(run_dir: Path) -> Checkpoint:
    return Checkpoint.from_json(json.loads((Path(run_dir) / "checkpoint.json").read_text()))


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))
