"""Small-scale rehearsal of the warm-start audit used by acceptance
criterion 7: extract per-pair transport values from recorded metrics and
recompute them with cold-started solves on identical inputs."""

import dataclasses

import numpy as np

from sinkbisim import transport as tr
from sinkbisim.apiloop import ApiConfig, _build_environment, run_steps
from sinkbisim.batch import run_batch, seed_dir
from sinkbisim.mdp import StochasticPolicy, expected_reward, policy_transition


def test_recorded_metrics_support_cold_reaudit(tmp_path):
    cfg = ApiConfig(
        num_states=40,
        num_classes=4,
        num_steps=30,
        alpha_mode="fixed",
        alpha=0.25,
        epsilon=0.1,
        seed=3,
    )
    run_batch(cfg, [3], tmp_path, "audit", workers=1, save_metrics=True)
    rdir = seed_dir(tmp_path, cfg, 3)
    metrics = np.load(rdir / "metrics.npy")
    first = np.load(rdir / "metrics_first.npy")
    policies = np.load(rdir / "policies.npy")
    mdp = _build_environment(dataclasses.replace(cfg, seed=3)).mdp
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(20, 30):
        pol = StochasticPolicy(policies[k])
        p_pi = policy_transition(mdp, pol)
        r_pi = expected_reward(mdp, pol)
        d_input = metrics[k - 1]  # first application's ground cost
        for _ in range(6):
            i, j = sorted(rng.choice(mdp.num_states, size=2, replace=False))
            warm_w = (first[k][i, j] - abs(r_pi[i] - r_pi[j])) / cfg.gamma
            cold_w = tr.sinkhorn_distance(
                d_input, p_pi[i], p_pi[j], p=cfg.p, lam=cfg.lam
            ).distance
            worst = max(worst, abs(warm_w - cold_w))
    assert worst <= 1e-8, worst


def test_cache_off_run_differs_only_in_iterations(tmp_path):
    base = ApiConfig(
        num_states=30,
        num_classes=3,
        num_steps=12,
        alpha_mode="fixed",
        alpha=0.25,
        seed=1,
    )
    warm = run_steps(base)
    cold = run_steps(dataclasses.replace(base, use_potential_cache=False))
    warm_gap = warm.column("gap_vstar")
    cold_gap = cold.column("gap_vstar")
    assert np.abs(warm_gap - cold_gap).max() < 1e-6
    assert warm.column("sinkhorn_iters")[3:].sum() < cold.column("sinkhorn_iters")[3:].sum()
