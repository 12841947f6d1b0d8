"""Measurement utilities: metric quality, partition agreement, and the
Sinkhorn-sharpness benchmark over entropy-controlled marginals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import transport as tr

_LOG2 = math.log(2.0)


def metric_value_gap(metric: np.ndarray, values: np.ndarray) -> float:
    """Worst-pair gap between a metric and the value-difference matrix,
    ``max_{i,j} | d[i,j] - |V[i] - V[j]| |``."""
    dv = np.abs(values[:, None] - values[None, :])
    return float(np.abs(metric - dv).max())


def signed_metric_value_gap(metric: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per-pair ``d[i,j] - |V[i] - V[j]|``; nonnegative once the metric
    dominates the value difference."""
    dv = np.abs(values[:, None] - values[None, :])
    return metric - dv


def entropy_bits(mu: np.ndarray) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    nz = mu[mu > 0]
    return float(-(nz * np.log(nz)).sum() / _LOG2)


def nmi(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Normalized mutual information with arithmetic-mean normalization.

    1.0 for identical partitions up to relabeling; 0.0 when either labeling
    is constant (zero-entropy convention).
    """
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape or labels_a.ndim != 1:
        raise ValueError("labelings must be vectors of equal length")
    n = labels_a.size
    _, a = np.unique(labels_a, return_inverse=True)
    _, b = np.unique(labels_b, return_inverse=True)
    ka, kb = a.max() + 1, b.max() + 1
    joint = np.zeros((ka, kb))
    np.add.at(joint, (a, b), 1.0)
    joint /= n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nzj = joint > 0
    mi = float(
        (joint[nzj] * np.log(joint[nzj] / np.outer(pa, pb)[nzj])).sum()
    )
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())
    denom = 0.5 * (ha + hb)
    if denom <= 0:
        return 0.0
    return max(0.0, min(1.0, mi / denom))


def sample_sphere_points(
    count: int, dim: int, radius: float, rng: np.random.Generator
) -> np.ndarray:
    """Uniform points on the radius-``radius`` sphere via normalized Gaussians."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # A zero draw has probability zero; resample defensively anyway.
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return radius * g / norms


def _dirichlet_mean_entropy_bits(dim: int, conc: float, rng, samples: int = 96) -> float:
    draws = rng.dirichlet(np.full(dim, conc), size=samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(draws > 0, draws * np.log(draws), 0.0)).sum(axis=1)
    return float(h.mean() / _LOG2)


def sample_simplex_with_entropy(
    dim: int,
    target_bits: float,
    tol_bits: float,
    rng: np.random.Generator,
    max_tries: int = 4000,
) -> np.ndarray:
    """Probability vector whose Shannon entropy (bits) hits a target.

    A symmetric-Dirichlet concentration matching the target mean entropy is
    found by bisection, then samples are rejected until one lands within
    ``tol_bits``. The degenerate targets (0 and log2(dim)) return the point
    mass and the uniform vector directly.
    """
    max_bits = math.log2(dim) if dim > 1 else 0.0
    if not 0 <= target_bits <= max_bits + 1e-12:
        raise ValueError(f"target entropy must be in [0, {max_bits:.4f}] bits")
    if dim == 1 or target_bits <= 1e-12:
        out = np.zeros(dim)
        out[int(rng.integers(dim))] = 1.0
        return out
    if target_bits >= max_bits - 1e-12:
        return np.full(dim, 1.0 / dim)
    lo, hi = 1e-3, 1e3
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if _dirichlet_mean_entropy_bits(dim, mid, rng) < target_bits:
            lo = mid
        else:
            hi = mid
    conc = math.sqrt(lo * hi)
    for _ in range(max_tries):
        cand = rng.dirichlet(np.full(dim, conc))
        if abs(entropy_bits(cand) - target_bits) <= tol_bits:
            return cand
    raise RuntimeError(
        f"entropy targeting failed: dim={dim} target={target_bits} bits"
    )


class EntropyTargetedSampler:
    """Batched rejection sampler for entropy-pinned simplex draws.

    Calibrates a concentration-to-entropy curve once per dimension, then
    serves arbitrary targets by interpolation plus vectorized rejection.
    Semantics match :func:`sample_simplex_with_entropy`.
    """

    def __init__(self, dim: int, rng: np.random.Generator, grid: int = 40):
        self.dim = dim
        self.rng = rng
        self.max_bits = math.log2(dim) if dim > 1 else 0.0
        concs = np.logspace(-3, 3, grid)
        means = np.array(
            [_dirichlet_mean_entropy_bits(dim, c, rng) for c in concs]
        )
        order = np.argsort(means)
        self._h = means[order]
        self._c = concs[order]

    def _concentration(self, target_bits: float) -> float:
        return float(np.interp(target_bits, self._h, self._c))

    def sample(self, target_bits: float, tol_bits: float, max_tries: int = 200):
        if self.dim == 1 or target_bits <= 1e-12:
            out = np.zeros(self.dim)
            out[int(self.rng.integers(self.dim))] = 1.0
            return out
        if target_bits >= self.max_bits - 1e-12:
            return np.full(self.dim, 1.0 / self.dim)
        conc = self._concentration(target_bits)
        block = 128
        for _ in range(max_tries):
            draws = self.rng.dirichlet(np.full(self.dim, conc), size=block)
            with np.errstate(divide="ignore", invalid="ignore"):
                h = -(np.where(draws > 0, draws * np.log(draws), 0.0)).sum(axis=1)
            h /= _LOG2
            hits = np.flatnonzero(np.abs(h - target_bits) <= tol_bits)
            if hits.size:
                return draws[hits[0]]
        raise RuntimeError(
            f"entropy targeting failed: dim={self.dim} target={target_bits} bits"
        )


@dataclass(frozen=True)
class SharpnessRecord:
    """One (mu1, mu2) comparison of a Sinkhorn distance against a tighter
    small-lambda reference on the same cost."""

    entropy_mu1_bits: float
    entropy_mu2_bits: float
    ambient_dim: int
    lam: float
    lam_ref: float
    distance: float
    reference: float
    relative_error: float
    seed: int


@dataclass
class SharpnessConfig:
    support: int = 32
    ambient_dims: tuple = (2, 8, 32)
    radius: float = 0.5
    lams: tuple = (0.1, 1.0, math.inf)
    lam_ref: float = 0.02
    entropy_targets: tuple = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5)
    entropy_tol_bits: float = 0.01
    num_mu1: int = 20
    num_mu2: int = 50
    entropy_cap_bits: float = 5.0
    seed: int = 0


def sinkhorn_sharpness_bench(config: SharpnessConfig) -> list[SharpnessRecord]:
    """Relative-error study of sharp Sinkhorn distances vs a tight reference.

    For each ambient dimension: sample ``support`` points on the sphere,
    build the Euclidean cost, then for every entropy bucket draw ``num_mu1``
    marginals mu1 pinned to the bucket entropy (within the tolerance) and
    ``num_mu2`` partners mu2 with entropy in [H(mu1), entropy_cap). Records
    hold (W^lam - W^ref) / W^ref per pair and lambda.
    """
    records: list[SharpnessRecord] = []
    opts = tr.SinkhornOptions(max_iters=100000)
    max_bits = math.log2(config.support)
    for dim in config.ambient_dims:
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, dim, 777))
        )
        points = sample_sphere_points(config.support, dim, config.radius, rng)
        cost = np.linalg.norm(points[:, None] - points[None, :], axis=-1)
        sampler = EntropyTargetedSampler(config.support, rng)
        for target in config.entropy_targets:
            mus1 = []
            mus2 = []
            for _ in range(config.num_mu1):
                try:
                    mu1 = sampler.sample(target, config.entropy_tol_bits)
                except RuntimeError:
                    continue  # bucket under-filled; skip this draw
                h1 = entropy_bits(mu1)
                cap = min(config.entropy_cap_bits, max_bits)
                for _ in range(config.num_mu2):
                    h2 = rng.uniform(min(h1 + config.entropy_tol_bits, cap), cap)
                    try:
                        mu2 = sampler.sample(h2, config.entropy_tol_bits)
                    except RuntimeError:
                        continue
                    mus1.append(mu1)
                    mus2.append(mu2)
            if not mus1:
                continue
            A = np.asarray(mus1)
            B = np.asarray(mus2)
            costs = np.broadcast_to(cost, (A.shape[0],) + cost.shape)
            ref, _, _ = tr.sinkhorn_distance_batch(
                costs, A, B, p=1.0, lam=config.lam_ref, opts=opts
            )
            for lam in config.lams:
                dist, _, _ = tr.sinkhorn_distance_batch(
                    costs, A, B, p=1.0, lam=lam, opts=opts
                )
                with np.errstate(divide="ignore", invalid="ignore"):
                    rel = np.where(ref > 0, (dist - ref) / ref, 0.0)
                for t in range(A.shape[0]):
                    records.append(
                        SharpnessRecord(
                            entropy_bits(A[t]),
                            entropy_bits(B[t]),
                            dim,
                            float(lam),
                            config.lam_ref,
                            float(dist[t]),
                            float(ref[t]),
                            float(rel[t]),
                            config.seed,
                        )
                    )
    return records
