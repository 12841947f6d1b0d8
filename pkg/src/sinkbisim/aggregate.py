"""State-space partitioning and abstract MDP construction.

Two partitioners are provided: greedy radius-epsilon aggregation (every state
sits within epsilon of its partition's medoid, so members are pairwise within
2 epsilon) and k-medoids with a fixed partition budget (BUILD + swap descent).
Abstract rewards and transitions are per-partition uniform averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMdp, StochasticPolicy, expected_reward, policy_transition

PAM_MAX_SWAP_PASSES = 300


@dataclass(frozen=True)
class Abstraction:
    """Partition labels (contiguous from 0) plus medoid representatives."""

    labels: np.ndarray
    medoids: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        medoids = np.asarray(self.medoids, dtype=np.intp)
        if labels.ndim != 1 or medoids.ndim != 1:
            raise ValueError("labels and medoids must be vectors")
        k = medoids.shape[0]
        present = np.unique(labels)
        if k == 0 or not np.array_equal(present, np.arange(k)):
            raise ValueError("labels must cover 0..k-1 for k medoids")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "medoids", medoids)

    @property
    def num_states(self) -> int:
        return self.labels.shape[0]

    @property
    def num_partitions(self) -> int:
        return self.medoids.shape[0]

    def indicator(self) -> np.ndarray:
        """One-hot membership matrix of shape (num_partitions, num_states)."""
        phi = np.zeros((self.num_partitions, self.num_states))
        phi[self.labels, np.arange(self.num_states)] = 1.0
        return phi

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_partitions)


@dataclass(frozen=True)
class AbstractMdpView:
    """Per-partition averaged rewards and transitions for a fixed policy."""

    rewards: np.ndarray
    transitions: np.ndarray
    sizes: np.ndarray


def epsilon_aggregate(metric: np.ndarray, epsilon: float) -> Abstraction:
    """Greedy medoid selection with radius ``epsilon``.

    Repeatedly picks the unassigned state with the most epsilon-neighbours
    (ties to the lowest index), opens a partition holding it and every
    still-unassigned state within epsilon of it, and suppresses the new
    members from future medoid selection.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    n = metric.shape[0]
    close = metric <= epsilon
    num_neighbours = close.sum(axis=1).astype(np.float64)
    labels = np.full(n, -1, dtype=np.intp)
    medoids = []
    while (labels < 0).any():
        m = int(np.argmax(num_neighbours))  # argmax takes the lowest index on ties
        members = np.flatnonzero(close[m] & (labels < 0))
        label = len(medoids)
        labels[m] = label
        labels[members] = label
        num_neighbours[members] = -np.inf
        num_neighbours[m] = -np.inf
        medoids.append(m)
    return Abstraction(labels, np.asarray(medoids, dtype=np.intp))


def _pam_build(metric: np.ndarray, k: int) -> np.ndarray:
    """Classic BUILD initialization: greedily add the medoid that most
    reduces the total distance of states to their nearest medoid."""
    n = metric.shape[0]
    first = int(np.argmin(metric.sum(axis=1)))
    medoids = [first]
    nearest = metric[first].copy()
    for _ in range(1, k):
        gains = np.maximum(nearest[None, :] - metric, 0.0).sum(axis=1)
        gains[medoids] = -np.inf
        best = int(np.argmax(gains))
        medoids.append(best)
        nearest = np.minimum(nearest, metric[best])
    return np.asarray(sorted(medoids), dtype=np.intp)


def pam_partition(metric: np.ndarray, k: int, seed: int = 0) -> Abstraction:
    """Partitioning around medoids with a fixed budget of ``k`` partitions.

    BUILD initialization followed by steepest-descent swaps: each pass
    evaluates every (medoid, non-medoid) exchange and applies the single most
    improving one, tie-broken to the lowest indices; stops when no swap
    improves the total within-partition distance to medoids. Deterministic
    (``seed`` is accepted for interface stability only).
    """
    n = metric.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    medoids = _pam_build(metric, k)
    for _ in range(PAM_MAX_SWAP_PASSES):
        dm = metric[medoids]  # (k, n)
        order = np.argsort(dm, axis=0, kind="stable")
        nearest = dm[order[0], np.arange(n)]
        second = dm[order[1], np.arange(n)] if k > 1 else np.full(n, np.inf)
        nearest_id = order[0]
        # Cost change of swapping medoid m for candidate h, for every state s:
        # if s was served by m, it moves to min(second[s], d[h, s]); otherwise
        # it moves to d[h, s] only if that beats its current nearest.
        served = nearest_id[None, :] == np.arange(k)[:, None]  # (k, n)
        d_h = metric  # (n_candidates = n, n)
        move_serv = np.minimum(second[None, :], d_h[:, None, :]) - nearest[None, None, :]
        move_free = np.minimum(d_h[:, None, :] - nearest[None, None, :], 0.0)
        delta = np.where(served[None, :, :], move_serv, move_free).sum(axis=2)  # (n, k)
        delta[medoids, :] = np.inf  # swapping a medoid in for itself is a no-op
        best_flat = int(np.argmin(delta))
        h, m_idx = divmod(best_flat, k)
        if delta[h, m_idx] >= -1e-12:
            break
        medoids = medoids.copy()
        medoids[m_idx] = h
        medoids = np.asarray(sorted(medoids), dtype=np.intp)
    dm = metric[medoids]
    labels = np.argmin(dm, axis=0)  # lowest medoid index wins ties
    # Keep labels contiguous even if a medoid ends up serving no state.
    used = np.unique(labels)
    if used.size < medoids.size:
        remap = np.zeros(medoids.size, dtype=np.intp)
        remap[used] = np.arange(used.size)
        labels = remap[labels]
        medoids = medoids[used]
    return Abstraction(labels, medoids)


def pam_total_cost(metric: np.ndarray, abstraction: Abstraction) -> float:
    """Total distance of states to their partition medoids."""
    dm = metric[abstraction.medoids]
    return float(dm[abstraction.labels, np.arange(metric.shape[0])].sum())


def build_abstract_view(
    mdp: FiniteMdp, policy: StochasticPolicy, abstraction: Abstraction
) -> AbstractMdpView:
    """Per-partition averages of R_pi and P_pi under the counting measure."""
    if abstraction.num_states != mdp.num_states:
        raise ValueError("abstraction does not cover this MDP's states")
    r_pi = expected_reward(mdp, policy)
    p_pi = policy_transition(mdp, policy)
    phi = abstraction.indicator()
    sizes = abstraction.sizes().astype(np.float64)
    r_tilde = (phi @ r_pi) / sizes
    p_tilde = (phi @ p_pi @ phi.T) / sizes[:, None]
    row_err = np.abs(p_tilde.sum(axis=1) - 1.0).max()
    if row_err > 1e-10:
        raise RuntimeError(f"abstract transition rows off by {row_err:.3e}")
    return AbstractMdpView(r_tilde, p_tilde, sizes.astype(np.intp))


def lift_values(abstract_values: np.ndarray, abstraction: Abstraction) -> np.ndarray:
    """Compose abstract values with the partition labeling."""
    abstract_values = np.asarray(abstract_values, dtype=np.float64)
    if abstract_values.shape[0] != abstraction.num_partitions:
        raise ValueError("value vector length does not match partition count")
    return abstract_values[abstraction.labels]
