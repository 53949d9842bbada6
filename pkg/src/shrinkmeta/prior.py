"""Modular parameter layout and the per-module Gaussian shrinkage prior."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

SIGMA2_MIN = 1e-5
SIGMA2_MAX = 1e5
LOG_SIGMA2_MIN = float(np.log(SIGMA2_MIN))
LOG_SIGMA2_MAX = float(np.log(SIGMA2_MAX))

# shape of the inverse-Gamma hyperprior on each sigma^2
IG_SHAPE = 1.0


class ContractError(ValueError):
    """Raised when inputs violate a documented precondition."""


@dataclass(frozen=True)
class ModulePartition:
    """Named, disjoint index ranges covering ``[0, dim)``.

    ``modules`` holds ``(name, start, end)`` triples with half-open ranges.
    Ranges need not be listed in index order.
    """

    modules: tuple[tuple[str, int, int], ...]
    dim: int
    module_index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mods = tuple((str(n), int(s), int(e)) for n, s, e in self.modules)
        object.__setattr__(self, "modules", mods)
        if not mods:
            raise ContractError("partition needs at least one module")
        names = [m[0] for m in mods]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate module names: {names}")
        index = np.full(self.dim, -1, dtype=np.int64)
        for k, (name, start, end) in enumerate(mods):
            if not 0 <= start < end <= self.dim:
                raise ContractError(f"module {name!r} has bad range [{start}, {end})")
            if np.any(index[start:end] >= 0):
                raise ContractError(f"module {name!r} overlaps another module")
            index[start:end] = k
        if np.any(index < 0):
            raise ContractError("modules do not cover every parameter index")
        index.setflags(write=False)
        object.__setattr__(self, "module_index", index)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], names: Sequence[str] | None = None):
        if names is None:
            names = [f"m{k}" for k in range(len(sizes))]
        bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        mods = tuple((n, int(bounds[k]), int(bounds[k + 1])) for k, n in enumerate(names))
        return cls(mods, int(bounds[-1]))

    @classmethod
    def per_coordinate(cls, dim: int, prefix: str = "theta"):
        """One module per scalar parameter."""
        return cls.from_sizes([1] * dim, [f"{prefix}{d}" for d in range(dim)])

    @property
    def num_modules(self) -> int:
        return len(self.modules)

    @property
    def names(self) -> list[str]:
        return [m[0] for m in self.modules]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([e - s for _, s, e in self.modules], dtype=np.int64)

    def slice(self, name: str) -> slice:
        for n, s, e in self.modules:
            if n == name:
                return slice(s, e)
        raise KeyError(name)

    def expand(self, per_module: np.ndarray) -> np.ndarray:
        """Broadcast one value per module to a length-``dim`` vector."""
        per_module = np.asarray(per_module, dtype=float)
        if per_module.shape != (self.num_modules,):
            raise ContractError(
                f"expected {self.num_modules} module values, got shape {per_module.shape}"
            )
        return per_module[self.module_index]

    def reduce(self, per_coord: np.ndarray) -> np.ndarray:
        """Sum a length-``dim`` vector within each module."""
        return np.bincount(self.module_index, weights=per_coord, minlength=self.num_modules)

    def mask(self, names: Iterable[str]) -> np.ndarray:
        """Boolean coordinate mask selecting the named modules."""
        wanted = set(names)
        unknown = wanted - set(self.names)
        if unknown:
            raise ContractError(f"unknown modules: {sorted(unknown)}")
        keep = np.array([n in wanted for n in self.names])
        return keep[self.module_index]

    def to_json(self) -> dict:
        return {
            "modules": [{"name": n, "start": s, "end": e} for n, s, e in self.modules],
            "dim": self.dim,
        }

    @classmethod
    def from_json(cls, obj: dict | str):
        if isinstance(obj, str):
            obj = json.loads(obj)
        mods = tuple((m["name"], m["start"], m["end"]) for m in obj["modules"])
        return cls(mods, int(obj["dim"]))


@dataclass
class MetaParams:
    """Prior mean ``phi`` plus one log prior variance per module.

    ``alpha`` is only populated by learners that meta-learn per-module step
    sizes instead of variances.
    """

    phi: np.ndarray
    log_sigma2: np.ndarray
    partition: ModulePartition
    alpha: np.ndarray | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.log_sigma2 = np.asarray(self.log_sigma2, dtype=float)
        if self.phi.shape != (self.partition.dim,):
            raise ContractError(f"phi has shape {self.phi.shape}, partition dim {self.partition.dim}")
        if self.log_sigma2.shape != (self.partition.num_modules,):
            raise ContractError(
                f"log_sigma2 has shape {self.log_sigma2.shape}, "
                f"partition has {self.partition.num_modules} modules"
            )

    @classmethod
    def init(cls, phi, partition: ModulePartition, sigma2: float = 1.0):
        return cls(np.array(phi, dtype=float), np.full(partition.num_modules, np.log(sigma2)), partition)

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.log_sigma2)

    def sigma2_per_coord(self) -> np.ndarray:
        return self.partition.expand(self.sigma2)

    def precision_per_coord(self) -> np.ndarray:
        return self.partition.expand(np.exp(-self.log_sigma2))

    def is_finite(self) -> bool:
        ok = np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.log_sigma2))
        if self.alpha is not None:
            ok = ok and np.all(np.isfinite(self.alpha))
        return bool(ok)

    def copy(self) -> "MetaParams":
        alpha = None if self.alpha is None else self.alpha.copy()
        return replace(self, phi=self.phi.copy(), log_sigma2=self.log_sigma2.copy(), alpha=alpha)

    def to_json(self) -> dict:
        out = {
            "phi": self.phi.tolist(),
            "log_sigma2": self.log_sigma2.tolist(),
            "sigma2": {n: float(s) for n, s in zip(self.partition.names, self.sigma2)},
            "partition": self.partition.to_json(),
        }
        if self.alpha is not None:
            out["alpha"] = self.alpha.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict):
        alpha = obj.get("alpha")
        return cls(
            np.array(obj["phi"], dtype=float),
            np.array(obj["log_sigma2"], dtype=float),
            ModulePartition.from_json(obj["partition"]),
            None if alpha is None else np.array(alpha, dtype=float),
        )


def prior_terms(theta: np.ndarray, meta: MetaParams):
    """Negative log prior ``-log p(theta | sigma2, phi)`` and its gradients.

    Returns ``(nll, grad_theta, grad_phi, grad_log_sigma2)``; the last is
    taken with respect to ``log sigma2``.
    """
    theta = np.asarray(theta, dtype=float)
    part = meta.partition
    if theta.shape != (part.dim,):
        raise ContractError(f"theta has shape {theta.shape}, expected ({part.dim},)")
    diff = theta - meta.phi
    prec = meta.precision_per_coord()
    sq = part.reduce(diff * diff)
    sizes = part.sizes
    inv_s2 = np.exp(-meta.log_sigma2)
    nll = float(np.sum(0.5 * sizes * (np.log(2 * np.pi) + meta.log_sigma2) + 0.5 * sq * inv_s2))
    grad_theta = diff * prec
    grad_log_sigma2 = 0.5 * sizes - 0.5 * sq * inv_s2
    return nll, grad_theta, -grad_theta, grad_log_sigma2


def clip_sigma2(meta: MetaParams) -> MetaParams:
    """Project every sigma^2 into ``[SIGMA2_MIN, SIGMA2_MAX]``."""
    out = meta.copy()
    out.log_sigma2 = np.clip(meta.log_sigma2, LOG_SIGMA2_MIN, LOG_SIGMA2_MAX)
    return out


def ig_regularizer(meta: MetaParams, beta: float):
    """Negative inverse-Gamma log-density (shape 1, scale ``beta``), constants dropped.

    Returns the penalty summed over modules and its gradient in log sigma^2.
    """
    if beta < 0:
        raise ContractError(f"beta must be non-negative, got {beta}")
    log_s2 = meta.log_sigma2
    inv_s2 = np.exp(-log_s2)
    penalty = float(np.sum((IG_SHAPE + 1.0) * log_s2 + beta * inv_s2))
    return penalty, (IG_SHAPE + 1.0) - beta * inv_s2
