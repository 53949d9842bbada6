"""Rank modules by learned prior variance and evaluate adapting subsets of them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .adaptation import TaskData, adapt
from .models import TaskModel
from .prior import MetaParams


@dataclass
class ModuleEntry:
    index: int
    name: str
    sigma2: float
    rank: int
    selected: bool = False


@dataclass
class DiscoveryReport:
    entries: list[ModuleEntry]
    rule: str = "none"
    metrics: dict = field(default_factory=dict)

    @property
    def ranking(self) -> list[str]:
        return [e.name for e in sorted(self.entries, key=lambda e: e.rank)]

    @property
    def selection(self) -> list[str]:
        return [e.name for e in sorted(self.entries, key=lambda e: e.rank) if e.selected]

    def select_top_k(self, k: int) -> "DiscoveryReport":
        for e in self.entries:
            e.selected = e.rank < k
        self.rule = f"top-{k}"
        return self

    def select_threshold(self, threshold: float) -> "DiscoveryReport":
        for e in self.entries:
            e.selected = e.sigma2 > threshold
        self.rule = f"sigma2>{threshold:g}"
        return self

    def to_json(self) -> dict:
        return {
            "modules": [{"module": e.index, "name": e.name, "sigma2": e.sigma2, "rank": e.rank,
                         "selected": e.selected} for e in self.entries],
            "ranking": self.ranking,
            "selection": self.selection,
            "rule": self.rule,
            "metrics": self.metrics,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["module", "name", "sigma2", "rank", "selected"])
        for e in self.entries:
            w.writerow([e.index, e.name, repr(e.sigma2), e.rank, int(e.selected)])
        return buf.getvalue()


def rank_modules(meta: MetaParams) -> DiscoveryReport:
    """Rank 0 is the largest sigma2.  Ties keep partition order."""
    order = np.argsort(-meta.log_sigma2, kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(len(order))
    s2 = meta.sigma2
    entries = [ModuleEntry(i, n, float(s2[i]), int(ranks[i]))
               for i, n in enumerate(meta.partition.names)]
    return DiscoveryReport(entries)


def eval_masked_adaptation(model: TaskModel, tasks: list[TaskData], meta: MetaParams,
                           modules, steps: int, step_size: float, optimizer="prox_gd",
                           record_val=False):
    """Adapt only ``modules`` (others frozen at phi) and return per-task validation loss.

    With ``record_val`` the full ``(tasks, steps + 1)`` validation trajectories
    are returned instead.
    """
    mask = meta.partition.mask(modules)
    out = []
    for task in tasks:
        res = adapt(model, task, meta, steps, step_size, optimizer, mask=mask, record_val=record_val)
        out.append(res.val_curve() if record_val else model.loss(res.theta_hat, task.val))
    return np.array(out)
