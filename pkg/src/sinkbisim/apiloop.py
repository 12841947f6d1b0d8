"""Approximate policy iteration drivers over bisimulation-based aggregation.

Each step approximates the current policy's bisimulation metric by n operator
applications, hard-aggregates the state space under it, evaluates the policy
on the abstract MDP, lifts the values, and improves the policy with a
noise-calibrated greedy update. The naive variant relearns the metric from
the zero metric and replaces the policy outright; the conservative variants
warm-start the metric from the previous step and mix the greedy policy in
with weight alpha (fixed, or decaying as max(alpha_min, k^-0.8)).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import envgen
from .aggregate import (
    Abstraction,
    build_abstract_view,
    epsilon_aggregate,
    lift_values,
    pam_partition,
)
from .bisim import BisimParams, fixed_point_metric, zero_metric
from .measures import metric_value_gap, nmi
from .mdp import (
    FiniteMdp,
    StochasticPolicy,
    bellman_residual,
    evaluate_markov_chain,
    greedy_policy,
    mix_policies,
    optimal_values,
    policy_evaluation,
)
from .transport import PotentialCache

ALPHA_MODES = ("fixed", "decay", "naive")
PARTITION_MODES = ("epsilon", "pam")
DECAY_EXPONENT = 0.8
CALIBRATION_BUDGET = 50


@dataclass(frozen=True)
class ApiConfig:
    """Full experiment configuration; one instance pins one run family."""

    family: str = "ring_sparse"
    num_states: int = 200
    num_classes: int = 20
    num_actions: int = 2
    gamma: float = 0.9
    perturb_weight: float = 0.0
    shift_rewards: bool = False
    p: float = 1.0
    lam: float = 1.0
    epsilon: float = 0.1
    n_metric_iters: int = 28
    early_tol: float = 1e-3
    alpha_mode: str = "fixed"
    alpha: float = 1.0
    partition_mode: str = "epsilon"
    pam_budget: int = 30
    delta_low: float = 0.05
    delta_high: float = 0.1
    num_steps: int = 1000
    seed: int = 0
    use_potential_cache: bool = True
    record_nmi: bool = False

    def __post_init__(self):
        if self.family not in envgen.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.partition_mode not in PARTITION_MODES:
            raise ValueError(f"partition_mode must be one of {PARTITION_MODES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.n_metric_iters < 1:
            raise ValueError("n_metric_iters must be at least 1")
        if self.alpha_mode != "naive" and not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.delta_low < self.delta_high < 1:
            raise ValueError("delta range must satisfy 0 < low < high < 1")
        if self.num_steps < 1:
            raise ValueError("num_steps must be positive")
        if not (self.lam > 0 or math.isinf(self.lam)):
            raise ValueError("lam must be positive or inf")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lam"] = "inf" if math.isinf(self.lam) else self.lam
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ApiConfig":
        raw = dict(raw)
        if str(raw.get("lam")) in ("inf", "Infinity"):
            raw["lam"] = math.inf
        return cls(**raw)


@dataclass(frozen=True)
class StepRecord:
    step: int
    seed: int
    gap_vstar: float
    metric_value_gap: float
    num_partitions: int
    alpha_k: float
    delta_achieved: float
    sinkhorn_iters: int
    wall_ms: float
    metric_sup_change: float
    nmi: float = float("nan")
    metric_iters: int = 0


@dataclass
class RunResult:
    """Sequence of per-step records plus end-of-run artifacts."""

    records: list[StepRecord]
    config: ApiConfig
    v_star: np.ndarray
    final_policy: StochasticPolicy
    final_metric: np.ndarray
    final_labels: np.ndarray
    policies: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class NoisyGreedyResult:
    policy: StochasticPolicy
    achieved_delta: float
    sigma: float
    calibrated: bool


def alpha_schedule(kind: str, alpha: float, k: int) -> float:
    """Mixing weight at (1-based) step k: constant, or max(alpha, k^-0.8)."""
    if k < 1:
        raise ValueError("schedule steps are 1-based")
    if kind == "fixed":
        return alpha
    if kind == "decay":
        return max(alpha, float(k) ** -DECAY_EXPONENT)
    raise ValueError(f"unknown schedule kind {kind!r}")


def _noisy_policy(greedy_probs, sigma, rng) -> StochasticPolicy:
    noisy = greedy_probs + rng.normal(0.0, sigma, size=greedy_probs.shape)
    np.clip(noisy, 0.0, None, out=noisy)
    sums = noisy.sum(axis=1, keepdims=True)
    dead = sums[:, 0] <= 0
    if np.any(dead):  # all-zero row after clipping: keep the greedy action
        noisy[dead] = greedy_probs[dead]
        sums = noisy.sum(axis=1, keepdims=True)
    return StochasticPolicy(noisy / sums)


def noisy_greedy(
    mdp: FiniteMdp,
    values: np.ndarray,
    delta_range: tuple[float, float],
    rng: np.random.Generator,
    budget: int = CALIBRATION_BUDGET,
) -> NoisyGreedyResult:
    """Greedy policy perturbed by calibrated Gaussian noise.

    Perturbs the exact greedy policy's action probabilities with N(0, sigma)
    noise, clips and renormalizes, and searches sigma (geometric bracketing
    then log-scale bisection, at most ``budget`` residual evaluations) until
    the Bellman residual against ``values`` lands in ``delta_range``. If the
    budget runs out, the closest candidate is returned flagged uncalibrated.
    """
    lo, hi = delta_range
    if not 0 < lo < hi:
        raise ValueError("delta range must satisfy 0 < low < high")
    exact = greedy_policy(mdp, values)
    target = 0.5 * (lo + hi)
    sigma = 0.05
    bracket_lo = None  # largest sigma seen with residual below lo
    bracket_hi = None  # smallest sigma seen with residual above hi
    best: NoisyGreedyResult | None = None
    for _ in range(budget):
        candidate = _noisy_policy(exact.probs, sigma, rng)
        res = bellman_residual(mdp, candidate, values)
        if lo <= res <= hi:
            return NoisyGreedyResult(candidate, res, sigma, True)
        miss = abs(res - target)
        if best is None or miss < abs(best.achieved_delta - target):
            best = NoisyGreedyResult(candidate, res, sigma, False)
        if res < lo:
            bracket_lo = sigma if bracket_lo is None else max(bracket_lo, sigma)
        else:
            bracket_hi = sigma if bracket_hi is None else min(bracket_hi, sigma)
        if bracket_lo is None:
            sigma /= 2.0
        elif bracket_hi is None:
            sigma *= 2.0
        else:
            sigma = math.sqrt(bracket_lo * bracket_hi)
    return best


def _build_environment(config: ApiConfig) -> envgen.GeneratedMdp:
    kwargs = dict(num_states=config.num_states, m=config.num_classes, seed=config.seed)
    if config.family == "ring_sparse":
        gen = envgen.gen_ring_sparse(gamma=config.gamma, **kwargs)
    elif config.family == "dense_reward":
        gen = envgen.gen_dense_reward(
            gamma=config.gamma, shift_rewards=config.shift_rewards, **kwargs
        )
    else:
        gen = envgen.gen_random_chain(
            num_actions=config.num_actions, gamma=config.gamma, **kwargs
        )
    if config.perturb_weight > 0:
        gen = envgen.perturb_transitions(gen, config.perturb_weight, seed=config.seed)
    return gen


def _partition(config: ApiConfig, metric: np.ndarray) -> Abstraction:
    if config.partition_mode == "epsilon":
        return epsilon_aggregate(metric, config.epsilon)
    budget = min(config.pam_budget, config.num_states)
    return pam_partition(metric, budget, seed=config.seed)


def run_steps(
    config: ApiConfig, metric_sink=None, env=None, first_metric_sink=None
) -> RunResult:
    """Drive one API run; dispatch on ``alpha_mode`` is purely about metric
    initialization and the policy update rule. ``metric_sink(step, metric)``
    receives every step's approximate metric when provided, and
    ``first_metric_sink(step, metric)`` the first fixed-point iterate of each
    step. ``env`` supplies a pre-generated environment in place of the
    config's generator (the config still drives every random stream)."""
    gen = _build_environment(config) if env is None else env
    mdp = gen.mdp
    params = BisimParams(c_r=1.0, c_t=config.gamma, p=config.p, lam=config.lam)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 424242)))
    v_star = optimal_values(mdp)
    policy = StochasticPolicy.uniform(mdp.num_states, mdp.num_actions)
    cache = PotentialCache(mdp.num_states) if config.use_potential_cache else None
    naive = config.alpha_mode == "naive"
    metric_prev = zero_metric(mdp.num_states)
    records: list[StepRecord] = []
    policies: list[np.ndarray] = []
    labels = np.zeros(mdp.num_states, dtype=np.intp)
    for k in range(config.num_steps):
        policies.append(policy.probs.copy())
        t0 = time.perf_counter()
        report = fixed_point_metric(
            mdp,
            policy,
            d_init=None if naive else metric_prev,
            n=config.n_metric_iters,
            early_tol=config.early_tol,
            params=params,
            cache=cache,
            on_first_iterate=(
                None
                if first_metric_sink is None
                else (lambda m, _k=k: first_metric_sink(_k, m))
            ),
        )
        metric = report.metric
        sup_change = float(np.abs(metric - metric_prev).max())
        abstraction = _partition(config, metric)
        labels = abstraction.labels
        view = build_abstract_view(mdp, policy, abstraction)
        v_abstract = evaluate_markov_chain(view.rewards, view.transitions, mdp.discount)
        v_lifted = lift_values(v_abstract, abstraction)
        improvement = noisy_greedy(
            mdp, v_lifted, (config.delta_low, config.delta_high), rng
        )
        alpha_k = 1.0 if naive else alpha_schedule(config.alpha_mode, config.alpha, k + 1)
        next_policy = (
            improvement.policy
            if naive
            else mix_policies(policy, improvement.policy, alpha_k)
        )
        v_pi = policy_evaluation(mdp, policy)
        step_nmi = float("nan")
        if config.record_nmi:
            quality = pam_partition(metric, min(gen.num_classes, mdp.num_states))
            step_nmi = nmi(quality.labels, gen.ec_labels)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        records.append(
            StepRecord(
                step=k,
                seed=config.seed,
                gap_vstar=float(np.abs(v_star - v_pi).max()),
                metric_value_gap=metric_value_gap(metric, v_pi),
                num_partitions=abstraction.num_partitions,
                alpha_k=alpha_k,
                delta_achieved=improvement.achieved_delta,
                sinkhorn_iters=report.sinkhorn_iterations,
                wall_ms=wall_ms,
                metric_sup_change=sup_change,
                nmi=step_nmi,
                metric_iters=report.iterations_used,
            )
        )
        if metric_sink is not None:
            metric_sink(k, metric)
        metric_prev = metric
        policy = next_policy
    return RunResult(records, config, v_star, policy, metric_prev, labels, policies)


def run_api(config: ApiConfig, metric_sink=None) -> RunResult:
    """Naive variant: metric relearned from scratch, full policy replacement."""
    if config.alpha_mode != "naive":
        config = replace(config, alpha_mode="naive")
    return run_steps(config, metric_sink)


def run_api_alpha(config: ApiConfig, metric_sink=None) -> RunResult:
    """Conservative variant: warm-started metric, alpha-mixture updates."""
    if config.alpha_mode == "naive":
        raise ValueError("use run_api for the naive variant")
    return run_steps(config, metric_sink)
