"""Seeded generators for the three benchmark MDP families.

All families share the same skeleton: m equivalence classes (ECs) of equal
size whose EC-level dynamics are deterministic by construction, with the
landing distribution inside each target EC drawn uniformly from the
probability simplex. States in the same EC therefore have identical rewards
and identical EC-level transition behavior, so they are exactly bisimilar,
and every seed yields a different ground MDP with the same reduced MDP.

Randomness uses counter-based Philox streams split per call site: stream 0
drives within-EC landing rows, stream 1 the chain family's slip parameters
and jump targets, and stream 2 transition perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMdp

_STREAM_ROWS = 0
_STREAM_CHAIN = 1
_STREAM_PERTURB = 2


@dataclass(frozen=True)
class GeneratedMdp:
    mdp: FiniteMdp
    ec_labels: np.ndarray
    family: str
    seed: int

    @property
    def num_classes(self) -> int:
        return int(self.ec_labels.max()) + 1


def _stream(seed: int, site: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, site))))


def sample_simplex(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the (dim-1)-simplex (flat Dirichlet)."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if dim == 1:
        return np.ones(1)
    return rng.dirichlet(np.ones(dim))


def _simplex_rows(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.ones((count, 1))
    return rng.dirichlet(np.ones(dim), size=count)


def _check_sizes(num_states: int, m: int) -> int:
    if m < 1 or num_states < 1 or num_states % m != 0:
        raise ValueError(
            f"num_states ({num_states}) must be a positive multiple of m ({m})"
        )
    return num_states // m


def _block(i: int, width: int) -> slice:
    return slice(i * width, (i + 1) * width)


def gen_ring_sparse(
    num_states: int = 200, m: int = 20, seed: int = 0, gamma: float = 0.9
) -> GeneratedMdp:
    """Sparse-reward ring: action 0 advances one EC (and holds in the last),
    action 1 resets to the first EC; reward 1 only for action 0 in the last
    EC, so collecting it takes m consecutive advances after any reset."""
    width = _check_sizes(num_states, m)
    rng = _stream(seed, _STREAM_ROWS)
    p = np.zeros((num_states, 2, num_states))
    for i in range(m):
        target_adv = i + 1 if i + 1 < m else m - 1
        p[_block(i, width), 0, _block(target_adv, width)] = _simplex_rows(
            width, width, rng
        )
        p[_block(i, width), 1, _block(0, width)] = _simplex_rows(width, width, rng)
    r = np.zeros((num_states, 2))
    r[_block(m - 1, width), 0] = 1.0
    labels = np.repeat(np.arange(m), width)
    return GeneratedMdp(FiniteMdp(p, r, gamma), labels, "ring_sparse", seed)


def dense_reward_levels(m: int, gamma: float) -> np.ndarray:
    """Reward ladder r_0 = e, r_{i+1} = gamma r_i + e with e = (1-gamma)/(1-gamma^m).

    Telescoping gives r_j = e (1 - gamma^(j+1)) / (1 - gamma), increasing with
    r_{m-1} = 1 exactly.
    """
    e = (1.0 - gamma) / (1.0 - gamma**m)
    levels = e * (1.0 - gamma ** (np.arange(1, m + 1))) / (1.0 - gamma)
    return np.minimum(levels, 1.0)  # r_{m-1} = 1 exactly; clamp off round-off


def gen_dense_reward(
    num_states: int = 200,
    m: int = 20,
    gamma: float = 0.9,
    seed: int = 0,
    shift_rewards: bool = False,
) -> GeneratedMdp:
    """Dense-reward ladder: action 0 advances one EC, action 1 stays in the
    current EC, and the last EC absorbs under both actions. Action 0 in the
    i-th EC (1-indexed) pays r_{i-1} from the geometric recursion, reaching
    reward 1 in the absorbing EC. ``shift_rewards`` selects the alternative
    indexing that pays r_i instead.
    """
    width = _check_sizes(num_states, m)
    rng = _stream(seed, _STREAM_ROWS)
    p = np.zeros((num_states, 2, num_states))
    for i in range(m):
        adv = i + 1 if i + 1 < m else m - 1
        stay = i if i + 1 < m else m - 1
        p[_block(i, width), 0, _block(adv, width)] = _simplex_rows(width, width, rng)
        p[_block(i, width), 1, _block(stay, width)] = _simplex_rows(width, width, rng)
    levels = dense_reward_levels(m, gamma)
    if shift_rewards:
        levels = np.append(levels[1:], 1.0)
    r = np.zeros((num_states, 2))
    for i in range(m):
        r[_block(i, width), 0] = levels[i]
    labels = np.repeat(np.arange(m), width)
    return GeneratedMdp(FiniteMdp(p, r, gamma), labels, "dense_reward", seed)


def gen_random_chain(
    num_states: int = 200,
    m: int = 20,
    num_actions: int = 10,
    seed: int = 0,
    gamma: float = 0.9,
) -> GeneratedMdp:
    """Random chain: EC i's optimal action is ``i % num_actions``; it advances
    to the next EC (the last self-advances) with probability 1 - p_i, where
    p_i ~ U(0, 0.25), and otherwise jumps to one uniformly drawn EC other
    than the current and next. Every non-optimal action resets to the first
    EC. Reward 1 only for the optimal action in the last EC."""
    width = _check_sizes(num_states, m)
    if num_actions < 2:
        raise ValueError("the chain family needs at least two actions")
    rows = _stream(seed, _STREAM_ROWS)
    chain = _stream(seed, _STREAM_CHAIN)
    p = np.zeros((num_states, num_actions, num_states))
    slips = chain.uniform(0.0, 0.25, size=m)
    for i in range(m):
        optimal = i % num_actions
        adv = i + 1 if i + 1 < m else m - 1
        forbidden = {i, adv}
        others = [c for c in range(m) if c not in forbidden]
        jump = int(chain.choice(others))
        for a in range(num_actions):
            if a == optimal:
                p[_block(i, width), a, _block(adv, width)] = (
                    1.0 - slips[i]
                ) * _simplex_rows(width, width, rows)
                p[_block(i, width), a, _block(jump, width)] = slips[i] * _simplex_rows(
                    width, width, rows
                )
            else:
                p[_block(i, width), a, _block(0, width)] = _simplex_rows(
                    width, width, rows
                )
    r = np.zeros((num_states, num_actions))
    r[_block(m - 1, width), (m - 1) % num_actions] = 1.0
    labels = np.repeat(np.arange(m), width)
    return GeneratedMdp(FiniteMdp(p, r, gamma), labels, "random_chain", seed)


def perturb_transitions(
    generated: GeneratedMdp, weight: float, seed: int = 0
) -> GeneratedMdp:
    """Mix every per-action transition matrix with a fresh random one:
    ``(1 - weight) P(., a) + weight Q_a`` with Q_a rows uniform on the
    simplex. ``weight = 0`` returns an identical MDP."""
    if not 0 <= weight <= 1:
        raise ValueError("weight must be in [0, 1]")
    mdp = generated.mdp
    if weight == 0:
        return generated
    rng = _stream(seed, _STREAM_PERTURB)
    n, a, _ = mdp.transitions.shape
    p = mdp.transitions.copy()
    for action in range(a):
        q = _simplex_rows(n, n, rng)
        p[:, action, :] = (1.0 - weight) * p[:, action, :] + weight * q
    perturbed = FiniteMdp(p, mdp.rewards, mdp.discount)
    return GeneratedMdp(
        perturbed, generated.ec_labels, f"{generated.family}+perturb{weight}", seed
    )


FAMILIES = {
    "ring_sparse": gen_ring_sparse,
    "dense_reward": gen_dense_reward,
    "random_chain": gen_random_chain,
}
