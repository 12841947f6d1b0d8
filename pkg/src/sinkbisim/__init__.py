"""Sinkhorn bisimulation metrics, state aggregation, and approximate policy
iteration for finite MDPs, plus the experiment harness that drives them."""

from .aggregate import Abstraction, build_abstract_view, epsilon_aggregate, lift_values, pam_partition
from .apiloop import ApiConfig, StepRecord, alpha_schedule, noisy_greedy, run_api, run_api_alpha
from .bisim import BisimParams, FixedPointReport, apply_f, apply_f_pi, fixed_point_metric
from .envgen import GeneratedMdp, gen_dense_reward, gen_random_chain, gen_ring_sparse, perturb_transitions, sample_simplex
from .measures import metric_value_gap, nmi, sample_simplex_with_entropy, sample_sphere_points, sinkhorn_sharpness_bench
from .mdp import (
    FiniteMdp,
    StochasticPolicy,
    bellman_residual,
    expected_reward,
    greedy_policy,
    mix_policies,
    optimal_values,
    policy_evaluation,
    policy_transition,
    tv_distance_policies,
)
from .transport import (
    PotentialCache,
    SinkhornOptions,
    SinkhornPotentials,
    exact_wasserstein,
    pairwise_w_matrix,
    product_coupling_distance,
    sinkhorn_distance,
    sinkhorn_distance_batch,
)

__version__ = "0.1.0"

__all__ = [
    "Abstraction",
    "ApiConfig",
    "BisimParams",
    "FiniteMdp",
    "FixedPointReport",
    "GeneratedMdp",
    "PotentialCache",
    "SinkhornOptions",
    "SinkhornPotentials",
    "StepRecord",
    "StochasticPolicy",
    "alpha_schedule",
    "apply_f",
    "apply_f_pi",
    "bellman_residual",
    "build_abstract_view",
    "epsilon_aggregate",
    "exact_wasserstein",
    "expected_reward",
    "fixed_point_metric",
    "gen_dense_reward",
    "gen_random_chain",
    "gen_ring_sparse",
    "greedy_policy",
    "lift_values",
    "metric_value_gap",
    "mix_policies",
    "nmi",
    "noisy_greedy",
    "optimal_values",
    "pairwise_w_matrix",
    "pam_partition",
    "perturb_transitions",
    "policy_evaluation",
    "policy_transition",
    "product_coupling_distance",
    "run_api",
    "run_api_alpha",
    "sample_simplex",
    "sample_simplex_with_entropy",
    "sample_sphere_points",
    "sinkhorn_distance",
    "sinkhorn_distance_batch",
    "sinkhorn_sharpness_bench",
    "tv_distance_policies",
]
