"""Invariant suite for the closed-form oracle, run by ``shrinkmeta oracle-check``.

Each check returns a :class:`CheckResult`; none of them raise on failure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle as orc
from .adaptation import TaskData, adapt
from .cg import CGConfig
from .metagrad import sigma_imaml_meta_grad
from .models import Batch, normal_mean_model
from .prior import MetaParams, ModulePartition


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def check_theta_hat() -> CheckResult:
    vals = [orc.oracle_theta_hat(2.0, 0.0, 4, 1.0),
            orc.oracle_theta_hat(2.0, 0.0, 4, 1e12),
            orc.oracle_theta_hat(2.0, 0.5, 4, 1e-12)]
    ok = abs(vals[0] - 1.6) < 1e-12 and abs(vals[1] - 2.0) < 1e-10 and abs(vals[2] - 0.5) < 1e-10
    return CheckResult("theta_hat closed form and limits", ok, f"{vals}")


def check_root_zeroes_gradient(seed=0, trials=20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        st = orc.simulate_stats(50, 5, 5, rng.normal(), rng.uniform(0.5, 4), rng)
        phi = rng.normal()
        s2 = orc.oracle_sigma2_root(st, phi)
        if s2 <= 0:
            continue
        # scale-free: compare against the gradient magnitude at twice the root
        g = orc.oracle_sigma2_pll_grad(st, phi, s2)
        ref = abs(orc.oracle_sigma2_pll_grad(st, phi, 2 * s2)) + 1.0
        worst = max(worst, abs(g) / ref)
    return CheckResult("pll gradient vanishes at its root", worst <= 1e-10, f"max |grad| = {worst:.2e}")


def pipeline_sigma2_grad(xbar, ybar, phi, sigma2, N, K, steps=200):
    """``d l_val / d sigma2`` from the generic implicit pipeline on one task.

    The task's samples are placed symmetrically so their means are exact.
    """
    model = normal_mean_model()
    x = xbar + np.linspace(-1.0, 1.0, N) if N > 1 else np.array([xbar])
    y = ybar + np.linspace(-1.0, 1.0, K) if K > 1 else np.array([ybar])
    task = TaskData(Batch(x.reshape(-1, 1)), Batch(y.reshape(-1, 1)))
    meta = MetaParams(np.array([phi]), np.array([np.log(sigma2)]), ModulePartition.per_coordinate(1))
    lr = 1.0 / (N + 1.0 / sigma2)
    res = adapt(model, task, meta, steps, lr)
    mg = sigma_imaml_meta_grad(model, task, meta, res, CGConfig(max_iters=5, tol=1e-14))
    # chain rule from log sigma2 to sigma2
    return float(mg.d_log_sigma2[0] / sigma2)


def check_pipeline_matches_closed_form(seed=0, points=20, tol=1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        N, K = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        xbar, ybar, phi = rng.normal(size=3) * 2
        s2 = float(np.exp(rng.uniform(-2, 2)))
        got = pipeline_sigma2_grad(xbar, ybar, phi, s2, N, K)
        want = orc.oracle_sigma2_pll_grad(orc.NormalTaskStats([xbar], [ybar], N, K), phi, s2)
        worst = max(worst, abs(got - want) / max(abs(want), 1e-12))
    return CheckResult("implicit pipeline equals closed-form sigma2 gradient", worst <= tol,
                       f"max rel err = {worst:.2e}")


def check_consistency(sigma2_r, T=20000, N=5, K=5, phi_r=1.0, seed=0, tol=0.05) -> CheckResult:
    st = orc.simulate_stats(T, N, K, phi_r, sigma2_r, np.random.default_rng(seed))
    phi_p, s2_p = orc.pll_estimates(st)
    phi_j, s2_j = orc.joint_map_estimates(st)
    errs = [_rel(phi_p, phi_r), _rel(s2_p, sigma2_r), _rel(phi_j, phi_r), _rel(s2_j, sigma2_r)]
    return CheckResult(f"closed-form estimates within {tol:.0%} (sigma2_r={sigma2_r})", max(errs) <= tol,
                       f"pll=({phi_p:.4f}, {s2_p:.4f}) joint=({phi_j:.4f}, {s2_j:.4f})")


def check_joint_roots() -> CheckResult:
    a = orc.oracle_joint_map_sigma2(4.0, 1)
    b = orc.oracle_joint_map_sigma2(1.0, 2)
    c = orc.oracle_joint_map_sigma2(6.0, 1)
    ok = (abs(a.root - 1.0) < 1e-12 and b.diverges_to_zero
          and abs(c.root - (2 + np.sqrt(3))) < 1e-12 and abs(c.left_root - (2 - np.sqrt(3))) < 1e-12)
    return CheckResult("joint-MAP sigma2 roots", ok, f"N=1,S=6 -> {c.root:.7f}")


def check_joint_descent(cases=((1, 6.0), (2, 5.0), (5, 3.0)), tol=1e-4) -> CheckResult:
    details, ok = [], True
    for N, S in cases:
        xbar = orc.xbar_with_variance(S)
        out = orc.oracle_joint_map_sigma2(S, N)
        above = orc.joint_sigma2_descent(xbar, N, out.left_root * 1.5 + 0.5 * out.root)
        inside = orc.joint_sigma2_descent(xbar, N, 0.5 * out.left_root)
        ok &= _rel(above, out.root) <= tol and inside < 1e-6
        details.append(f"N={N},S={S}: {above:.6g}/{out.root:.6g}, inside->{inside:.1e}")
    # no real root: descent collapses from any start
    low = orc.joint_sigma2_descent(orc.xbar_with_variance(1.0), 2, 10.0)
    ok &= low < 1e-6
    details.append(f"S<4/N -> {low:.1e}")
    return CheckResult("joint-MAP sigma2 descent basins", bool(ok), "; ".join(details))


def check_corollary(T=10 ** 6, sigma2_r=8.0, N=1, seed=0) -> CheckResult:
    st = orc.simulate_stats(T, N, 1, 0.0, sigma2_r, np.random.default_rng(seed))
    S = st.S
    root = orc.oracle_joint_map_sigma2(S, N).root
    lim = orc.corollary_root_limit(sigma2_r, N)
    ok = _rel(S, sigma2_r + 1.0 / N) <= 0.01 and _rel(root, lim) <= 0.02
    return CheckResult("large-T limit of the joint-MAP root", ok,
                       f"S={S:.4f} (-> {sigma2_r + 1 / N}), root={root:.4f} (-> {lim:.4f})")


def lemma1_values(xbar=(0.3, -1.2, 2.0), N=5, phi=0.0):
    xbar = np.asarray(xbar)
    theta = np.full_like(xbar, phi)
    return [orc.joint_nll(theta, phi, 10.0 ** -k, xbar, N) for k in range(1, 9)]


def check_lemma1() -> CheckResult:
    v = lemma1_values()
    ok = all(b < a for a, b in zip(v, v[1:]))
    return CheckResult("joint loss at theta=phi decreases as sigma2 -> 0", ok,
                       f"{v[0]:.3f} ... {v[-1]:.3f}")


def run_all() -> list[CheckResult]:
    out = [check_theta_hat(), check_root_zeroes_gradient(), check_pipeline_matches_closed_form()]
    out += [check_consistency(s) for s in (0.5, 2.0, 8.0)]
    out += [check_joint_roots(), check_joint_descent(), check_corollary(), check_lemma1()]
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)
