"""Self-contained oracle battery: fast spot checks of the numerical core.

Each check re-derives expected values through an independent route (exact
linear programming, brute-force enumeration, closed forms) and compares the
production path against it. Used by the service/CLI `verify` surface; the
full test suite covers far more ground, this battery is the quick gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import transport as tr
from .bisim import BisimParams, apply_f_pi, fixed_point_metric
from .envgen import gen_ring_sparse
from .measures import nmi
from .mdp import FiniteMdp, StochasticPolicy, optimal_values, policy_evaluation
from .aggregate import pam_partition


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)  # numpy bools confuse serializers


def _random_cost(rng, n):
    pts = rng.random((n, 3))
    return np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)


def check_sinkhorn_vs_exact(rng) -> CheckResult:
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(3, 13))
        cost = _random_cost(rng, n)
        a = rng.dirichlet(np.ones(n))
        b = rng.dirichlet(np.ones(n))
        ref = tr.exact_wasserstein(cost, a, b)
        got = tr.sinkhorn_distance(
            cost, a, b, lam=1e-3, opts=tr.SinkhornOptions(max_iters=100000)
        ).distance
        if got < ref - 1e-9:
            return CheckResult(
                "sinkhorn_vs_exact", False, f"undershoot {got - ref:.2e}"
            )
        worst = max(worst, got - ref)
    return CheckResult("sinkhorn_vs_exact", worst < 1e-4, f"max gap {worst:.2e}")


def check_indicator_identity(rng) -> CheckResult:
    n = 9
    cost = 1.0 - np.eye(n)
    worst = 0.0
    for _ in range(25):
        a = rng.dirichlet(np.ones(n))
        b = rng.dirichlet(np.ones(n))
        dtv = 0.5 * np.abs(a - b).sum()
        for p in (1, 2, 3):
            got = tr.exact_wasserstein(cost, a, b, p)
            worst = max(worst, abs(got - dtv ** (1 / p)))
    return CheckResult("indicator_identity", worst < 1e-9, f"max err {worst:.2e}")


def check_mico_closed_form(rng) -> CheckResult:
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(3, 13))
        cost = _random_cost(rng, n)
        a = rng.dirichlet(np.ones(n))
        b = rng.dirichlet(np.ones(n))
        pc = tr.product_coupling_distance(cost, a, b)
        got = tr.sinkhorn_distance(cost, a, b, lam=1e6).distance
        worst = max(worst, abs(got - pc))
    return CheckResult("mico_closed_form", worst < 1e-5, f"max err {worst:.2e}")


def check_operator_contraction(rng) -> CheckResult:
    worst = -math.inf
    for _ in range(10):
        n = 8
        p = rng.dirichlet(np.ones(n), size=(n, 2))
        r = rng.random((n, 2))
        mdp = FiniteMdp(p, r, 0.9)
        pol = StochasticPolicy(rng.dirichlet(np.ones(2), size=n))
        params = BisimParams(c_r=1.0, c_t=0.9, lam=1.0)
        d1, d2 = _random_cost(rng, n), _random_cost(rng, n)
        f1, _ = apply_f_pi(mdp, pol, d1, params)
        f2, _ = apply_f_pi(mdp, pol, d2, params)
        worst = max(worst, np.abs(f1 - f2).max() - 0.9 * np.abs(d1 - d2).max())
    return CheckResult("operator_contraction", worst <= 1e-9, f"slack {worst:.2e}")


def check_value_lipschitz(rng) -> CheckResult:
    worst = -math.inf
    for _ in range(4):
        n = 10
        p = rng.dirichlet(np.ones(n), size=(n, 2))
        r = rng.random((n, 2))
        mdp = FiniteMdp(p, r, 0.9)
        pol = StochasticPolicy(rng.dirichlet(np.ones(2), size=n))
        params = BisimParams.for_mdp(mdp, lam=1.0)
        d = fixed_point_metric(mdp, pol, n=3000, early_tol=1e-10, params=params).metric
        v = policy_evaluation(mdp, pol)
        dv = np.abs(v[:, None] - v[None, :])
        worst = max(worst, float((dv - d).max()))
    return CheckResult("value_lipschitz", worst <= 2e-3, f"max overshoot {worst:.2e}")


def check_ring_family_ground_truth(rng) -> CheckResult:
    gen = gen_ring_sparse(40, 4, seed=int(rng.integers(1 << 16)))
    v = optimal_values(gen.mdp)
    spread = max(
        v[gen.ec_labels == c].max() - v[gen.ec_labels == c].min() for c in range(4)
    )
    params = BisimParams.for_mdp(gen.mdp, lam=1.0)
    pol = StochasticPolicy.uniform(40, 2)
    d = fixed_point_metric(gen.mdp, pol, n=400, early_tol=1e-11, params=params).metric
    labels = pam_partition(d, 4).labels
    score = nmi(labels, gen.ec_labels)
    ok = spread < 1e-7 and score > 0.999
    return CheckResult(
        "ring_family_ground_truth", ok, f"V* spread {spread:.1e}, NMI {score:.3f}"
    )


ALL_CHECKS = (
    check_sinkhorn_vs_exact,
    check_indicator_identity,
    check_mico_closed_form,
    check_operator_contraction,
    check_value_lipschitz,
    check_ring_family_ground_truth,
)


def run_battery(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check(rng) for check in ALL_CHECKS]
