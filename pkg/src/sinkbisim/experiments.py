"""Canonical experiment grids for the reproduction study, plus a builder that
materializes them all into an artifact directory.

Each entry is (experiment_id, config, seeds, options). The grids mirror the
controlled studies: alpha ablation, naive-vs-warm-start schedule comparison,
(p, lambda) ablation, warm/cold potential caching, and PAM-budget runs over
increasingly stochastic transitions, plus the Sinkhorn sharpness benchmark.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path



from .apiloop import ApiConfig
from .batch import run_batch
from .measures import SharpnessConfig, sinkhorn_sharpness_bench

SEEDS10 = tuple(range(10))

MDP1 = dict(
    family="ring_sparse",
    num_states=200,
    num_classes=20,
    gamma=0.9,
    p=1.0,
    lam=1.0,
    epsilon=0.1,
    n_metric_iters=28,
)


def alpha_ablation_grid():
    """Fixed-alpha runs on the sparse ring (1000 steps, 10 seeds)."""
    for alpha in (0.0625, 0.25, 1.0):
        cfg = ApiConfig(alpha_mode="fixed", alpha=alpha, num_steps=1000, **MDP1)
        yield f"alpha_{alpha}", cfg, SEEDS10, {}


def schedule_comparison_grid():
    """Naive relearning vs warm-started schedules at n in {1, 28} (200 steps)."""
    base = dict(MDP1)
    for n in (1, 28):
        naive = ApiConfig(
            alpha_mode="naive", num_steps=200, **{**base, "n_metric_iters": n}
        )
        yield f"naive_n{n}", naive, SEEDS10, {}
    decay = ApiConfig(
        alpha_mode="decay",
        alpha=2.0**-6,
        num_steps=200,
        **{**base, "n_metric_iters": 1},
    )
    yield "decay_n1", decay, SEEDS10, {}
    fixed1 = ApiConfig(alpha_mode="fixed", alpha=1.0, num_steps=200, **base)
    yield "api_alpha1_n28", fixed1, SEEDS10, {}


def lambda_ablation_grid():
    """Transport regularization sweep with the decaying schedule (300 steps)."""
    for lam in (0.1, 1.0, math.inf):
        cfg = ApiConfig(
            alpha_mode="decay",
            alpha=0.01,
            num_steps=300,
            **{**MDP1, "lam": lam},
        )
        tag = "inf" if math.isinf(lam) else str(lam)
        yield f"lambda_{tag}", cfg, SEEDS10, {}


def warm_cold_grid():
    """Potential-cache on/off at alpha = 0.0625 (300 steps, single seed);
    the warm run keeps per-step metrics and policies for the audit."""
    base = dict(MDP1)
    warm = ApiConfig(
        alpha_mode="fixed", alpha=0.0625, num_steps=300, use_potential_cache=True, **base
    )
    cold = ApiConfig(
        alpha_mode="fixed", alpha=0.0625, num_steps=300, use_potential_cache=False, **base
    )
    yield "warm_cache", warm, (0,), {"save_metrics": True}
    yield "cold_cache", cold, (0,), {}


def pam_budget_grid():
    """30-medoid aggregation over perturbation weights and two lambdas
    (300 steps, 10 seeds, per-step NMI against the ground-truth classes)."""
    for weight in (0.0, 0.05, 0.5):
        for lam in (0.25, math.inf):
            cfg = ApiConfig(
                alpha_mode="decay",
                alpha=0.01,
                num_steps=300,
                partition_mode="pam",
                pam_budget=30,
                perturb_weight=weight,
                record_nmi=True,
                **{**MDP1, "lam": lam},
            )
            tag = "inf" if math.isinf(lam) else str(lam)
            yield f"pam_w{weight}_lambda_{tag}", cfg, SEEDS10, {}


ALL_GRIDS = {
    "alpha_ablation": alpha_ablation_grid,
    "schedule_comparison": schedule_comparison_grid,
    "lambda_ablation": lambda_ablation_grid,
    "warm_cold": warm_cold_grid,
    "pam_budget": pam_budget_grid,
}


def build_sharpness(out_root: Path, seed: int = 0) -> Path:
    out_dir = Path(out_root) / "sharpness"
    done = out_dir / "records.csv"
    if done.exists():
        return out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    config = SharpnessConfig(seed=seed)
    records = sinkhorn_sharpness_bench(config)
    import csv

    with open(done, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            (
                "entropy_mu1_bits",
                "entropy_mu2_bits",
                "ambient_dim",
                "lam",
                "lam_ref",
                "distance",
                "reference",
                "relative_error",
                "seed",
            )
        )
        for r in records:
            writer.writerow(
                (
                    repr(r.entropy_mu1_bits),
                    repr(r.entropy_mu2_bits),
                    str(r.ambient_dim),
                    "inf" if math.isinf(r.lam) else repr(r.lam),
                    repr(r.lam_ref),
                    repr(r.distance),
                    repr(r.reference),
                    repr(r.relative_error),
                    str(r.seed),
                )
            )
    meta = {
        "experiment_id": "sharpness",
        "num_mu1": config.num_mu1,
        "num_mu2": config.num_mu2,
        "entropy_targets": list(config.entropy_targets),
        "ambient_dims": list(config.ambient_dims),
        "lams": ["inf" if math.isinf(x) else x for x in config.lams],
        "lam_ref": config.lam_ref,
        "seed": config.seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return out_dir


def build_all(out_root, workers=2, only=None, echo=print):
    out_root = Path(out_root)
    for grid_name, grid in ALL_GRIDS.items():
        if only and grid_name not in only:
            continue
        for exp_id, cfg, seeds, opts in grid():
            echo(f"[{grid_name}] {exp_id} ...")
            path = run_batch(
                cfg,
                seeds,
                out_root / grid_name,
                experiment_id=exp_id,
                workers=workers,
                **opts,
            )
            echo(f"[{grid_name}] {exp_id} -> {path}")
    if only is None or "sharpness" in only:
        echo("[sharpness] ...")
        build_sharpness(out_root)
        echo("[sharpness] done")


def main(argv=None):
    parser = argparse.ArgumentParser(description="materialize experiment artifacts")
    parser.add_argument("--out", default=".artifacts")
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--only", nargs="*", default=None)
    args = parser.parse_args(argv)
    build_all(args.out, workers=args.workers, only=args.only)
    return 0


if __name__ == "__main__":
    sys.exit(main())
