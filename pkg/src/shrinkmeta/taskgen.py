"""Seeded task distributions.

Every task draws from its own Philox stream keyed by ``(seed, stream, index)``
so a task's data depends only on its index, never on generation order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import TaskData
from .models import Batch, GaussianObsModel, SinusoidMLP
from .prior import ContractError

STREAM_HIER = 1
STREAM_SINUSOID = 2
STREAM_META = 3
STREAM_INIT = 4
STREAM_TEST = 5


def task_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class HierNormalSpec:
    """``theta ~ N(phi_r, diag(sigma_r^2))``, ``x ~ N(mu(theta), diag(xi^2))``."""

    phi_r: tuple[float, ...]
    sigma_r: tuple[float, ...]
    xi: tuple[float, ...]
    transform: str = "identity"
    omega: float = float(np.pi / 5)
    n_train: int = 5
    n_val: int = 5
    T: int = 100

    def __post_init__(self):
        for name in ("phi_r", "sigma_r", "xi"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if len(self.sigma_r) != len(self.phi_r):
            raise ContractError("phi_r and sigma_r must have the same length")
        if min(self.sigma_r) <= 0 or min(self.xi) <= 0:
            raise ContractError("standard deviations must be positive")
        if self.n_train < 1:
            raise ContractError("n_train must be at least 1")

    @property
    def dim(self) -> int:
        return len(self.phi_r)

    def model(self) -> GaussianObsModel:
        return GaussianObsModel(self.dim, np.square(self.xi), self.transform, omega=self.omega)

    def to_json(self) -> dict:
        return {"kind": "hier_normal", **asdict(self)}


def example1_spec(phi_r=1.0, sigma2_r=2.0, N=5, K=5, T=20000) -> HierNormalSpec:
    """Univariate normal means with unit observation noise."""
    return HierNormalSpec((phi_r,), (np.sqrt(sigma2_r),), (1.0,), "identity", n_train=N, n_val=K, T=T)


def experiment1_spec(n_train=1, n_val=1, T=1000) -> HierNormalSpec:
    """Eight latent dimensions observed directly plus through their scaled sum."""
    return HierNormalSpec((1.0,) * 8, (8.0,) * 4 + (2.0,) * 4, (8.0,) * 4 + (5.0,) * 4 + (1.0,),
                          "linear", n_train=n_train, n_val=n_val, T=T)


def experiment2_spec(n_train=2, n_val=2, T=1000) -> HierNormalSpec:
    """Ten latent dimensions seen through the swirl map."""
    return HierNormalSpec((2.0,) * 10, (4.0,) * 8 + (8.0,) * 2, (10.0,) * 10, "swirl",
                          n_train=n_train, n_val=n_val, T=T)


def hier_normal_task(spec: HierNormalSpec, seed: int, index: int, model=None):
    """Task ``index`` and its true parameters."""
    model = model or spec.model()
    rng = task_rng(seed, STREAM_HIER, index)
    theta = np.asarray(spec.phi_r) + np.asarray(spec.sigma_r) * rng.standard_normal(spec.dim)
    mu = model.mean(theta)
    xi = np.broadcast_to(np.asarray(spec.xi), mu.shape)
    n = spec.n_train + spec.n_val
    x = mu + xi * rng.standard_normal((n, mu.size))
    val = Batch(x[spec.n_train:]) if spec.n_val > 0 else None
    return TaskData(Batch(x[: spec.n_train]), val), theta


def gen_hier_normal_tasks(spec: HierNormalSpec, seed: int, start: int = 0):
    """``spec.T`` tasks and a ``(T, D)`` array of their true parameters."""
    model = spec.model()
    out = [hier_normal_task(spec, seed, start + i, model) for i in range(spec.T)]
    return [t for t, _ in out], np.array([th for _, th in out])


@dataclass(frozen=True)
class SinusoidSpec:
    amp_range: tuple[float, float] = (0.1, 5.0)
    phase_range: tuple[float, float] = (0.0, float(np.pi))
    x_range: tuple[float, float] = (-5.0, 5.0)
    n_train: int = 10
    n_val: int = 10

    def model(self, hidden: int = 40) -> SinusoidMLP:
        return SinusoidMLP(hidden)

    def to_json(self) -> dict:
        return {"kind": "sinusoid", **asdict(self)}


def sinusoid_task(spec: SinusoidSpec, seed: int, index: int):
    """Task ``index`` and its ``(amplitude, phase)``."""
    rng = task_rng(seed, STREAM_SINUSOID, index)
    a = rng.uniform(*spec.amp_range)
    b = rng.uniform(*spec.phase_range)
    x = rng.uniform(*spec.x_range, size=spec.n_train + spec.n_val)
    y = a * np.sin(x - b)
    tr = Batch(x[: spec.n_train], y[: spec.n_train])
    val = Batch(x[spec.n_train:], y[spec.n_train:]) if spec.n_val > 0 else None
    return TaskData(tr, val), (a, b)


def gen_sinusoid_tasks(spec: SinusoidSpec, count: int, seed: int, start: int = 0) -> list[TaskData]:
    if count < 1:
        raise ContractError("count must be at least 1")
    return [sinusoid_task(spec, seed, start + i)[0] for i in range(count)]


def spec_from_json(obj: dict):
    obj = dict(obj)
    kind = obj.pop("kind")
    obj.pop("count", None)
    if kind == "hier_normal":
        return HierNormalSpec(**obj)
    if kind == "sinusoid":
        for key in ("amp_range", "phase_range", "x_range"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return SinusoidSpec(**obj)
    presets = {"example1": example1_spec, "experiment1": experiment1_spec,
               "experiment2": experiment2_spec}
    if kind in presets:
        return presets[kind](**obj)
    raise ContractError(f"unknown task spec kind {kind!r}")


def generate(spec, seed: int, count: int | None = None):
    """Tasks for either spec type; ``count`` defaults to ``spec.T`` or 100."""
    if isinstance(spec, HierNormalSpec):
        if count is not None and count != spec.T:
            spec = HierNormalSpec(**{**asdict(spec), "T": count})
        tasks, thetas = gen_hier_normal_tasks(spec, seed)
        return tasks, thetas
    return gen_sinusoid_tasks(spec, count or 100, seed), None


def save_tasks(path, tasks: list[TaskData], thetas=None):
    obj = {"tasks": [t.to_json() for t in tasks]}
    if thetas is not None:
        obj["theta"] = np.asarray(thetas).tolist()
    Path(path).write_text(json.dumps(obj))


def load_tasks(path) -> list[TaskData]:
    obj = json.loads(Path(path).read_text())
    return [TaskData.from_json(t) for t in obj["tasks"]]
