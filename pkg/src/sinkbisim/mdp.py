"""Finite discounted MDPs: Bellman machinery, exact evaluation and improvement.

Everything here operates on dense numpy arrays. Values are exact up to linear
solver precision, which keeps dynamic programming out of the error budget of
the policy-iteration experiments built on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Policy evaluation switches from a direct dense solve to value iteration
# above this state count.
DENSE_SOLVE_MAX_STATES = 4096

_ROW_SUM_TOL = 1e-12


class DimensionMismatchError(ValueError):
    """Shapes of MDP, policy or value arrays do not agree."""


@dataclass(frozen=True)
class FiniteMdp:
    """A finite discounted MDP ``(S, A, P, R, gamma)``.

    transitions: ``P[s, a, s']``, each row a probability distribution.
    rewards: ``R[s, a]`` in ``[0, 1]``.
    discount: ``gamma`` strictly below 1.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    discount: float

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise DimensionMismatchError(
                f"rewards shape {r.shape} does not match transitions {p.shape[:2]}"
            )
        if np.any(p < 0):
            raise ValueError("transition probabilities must be nonnegative")
        row_err = np.abs(p.sum(axis=2) - 1.0).max()
        if row_err > _ROW_SUM_TOL:
            raise ValueError(f"transition rows must sum to 1 (violation {row_err:.3e})")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not 0 <= self.discount < 1:
            raise ValueError(f"discount must be in [0, 1), got {self.discount}")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def value_upper_bound(self) -> float:
        """Upper bound 1/(1-gamma) on any value for rewards in [0, 1]."""
        return 1.0 / (1.0 - self.discount)


@dataclass(frozen=True)
class StochasticPolicy:
    """Row-stochastic ``pi[s, a]`` action distribution per state."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"policy must be a 2-d matrix, got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("policy probabilities must be nonnegative")
        row_err = np.abs(p.sum(axis=1) - 1.0).max()
        if row_err > _ROW_SUM_TOL:
            raise ValueError(f"policy rows must sum to 1 (violation {row_err:.3e})")
        object.__setattr__(self, "probs", p)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "StochasticPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: np.ndarray, num_actions: int) -> "StochasticPolicy":
        actions = np.asarray(actions, dtype=np.intp)
        probs = np.zeros((actions.shape[0], num_actions))
        probs[np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs)


def _check_policy_dims(mdp: FiniteMdp, policy: StochasticPolicy) -> None:
    if policy.probs.shape != mdp.rewards.shape:
        raise DimensionMismatchError(
            f"policy shape {policy.probs.shape} does not match MDP (S, A) {mdp.rewards.shape}"
        )


def expected_reward(mdp: FiniteMdp, policy: StochasticPolicy) -> np.ndarray:
    """Per-state expected immediate reward ``R_pi[s] = sum_a pi[s,a] R[s,a]``."""
    _check_policy_dims(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.rewards)


def policy_transition(mdp: FiniteMdp, policy: StochasticPolicy) -> np.ndarray:
    """State transition matrix ``P_pi[s, s'] = sum_a pi[s,a] P[s,a,s']``."""
    _check_policy_dims(mdp, policy)
    p_pi = np.einsum("sa,sat->st", policy.probs, mdp.transitions)
    # Rows are convex combinations of stochastic rows; renormalization is not
    # needed, but guard against accumulated round-off beyond spec tolerance.
    assert np.abs(p_pi.sum(axis=1) - 1.0).max() < 1e-10
    return p_pi


def evaluate_markov_chain(
    r_pi: np.ndarray, p_pi: np.ndarray, gamma: float, tol: float = 1e-10
) -> np.ndarray:
    """Solve ``V = r_pi + gamma P_pi V`` for a reward vector and chain matrix.

    Direct dense solve of ``(I - gamma P_pi) V = r_pi`` up to
    ``DENSE_SOLVE_MAX_STATES`` states, value iteration beyond that. The result
    satisfies ``||V - (r_pi + gamma P_pi V)||_inf <= tol * (1 - gamma)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = r_pi.shape[0]
    if n <= DENSE_SOLVE_MAX_STATES:
        system = np.eye(n) - gamma * p_pi
        try:
            v = np.linalg.solve(system, r_pi)
        except np.linalg.LinAlgError as exc:  # unreachable for gamma < 1
            raise np.linalg.LinAlgError(
                f"(I - gamma P_pi) reported singular (gamma={gamma}): {exc}"
            ) from exc
        return v
    v = np.zeros(n)
    # Residual of the returned iterate is bounded by gamma * last step size.
    target = tol * (1.0 - gamma)
    while True:
        v_next = r_pi + gamma * (p_pi @ v)
        step = np.abs(v_next - v).max()
        v = v_next
        if gamma * step <= target:
            return v


def policy_evaluation(
    mdp: FiniteMdp, policy: StochasticPolicy, tol: float = 1e-10
) -> np.ndarray:
    """Exact value function ``V^pi`` of a stationary policy."""
    r_pi = expected_reward(mdp, policy)
    p_pi = policy_transition(mdp, policy)
    return evaluate_markov_chain(r_pi, p_pi, mdp.discount, tol)


def q_values(mdp: FiniteMdp, values: np.ndarray) -> np.ndarray:
    """One-step lookahead ``Q[s, a] = R[s, a] + gamma sum_s' P[s,a,s'] V[s']``."""
    return mdp.rewards + mdp.discount * np.einsum("sat,t->sa", mdp.transitions, values)


def greedy_policy(mdp: FiniteMdp, values: np.ndarray) -> StochasticPolicy:
    """Deterministic argmax policy for ``values``; ties go to the lowest action."""
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    actions = np.argmax(q_values(mdp, values), axis=1)  # argmax takes first maximum
    return StochasticPolicy.deterministic(actions, mdp.num_actions)


def optimal_values(mdp: FiniteMdp, tol: float = 1e-10) -> np.ndarray:
    """Optimal value function via exact policy iteration.

    Policy iteration with exact evaluations terminates at the optimal policy
    for a finite MDP; the returned values satisfy ``||V - TV||_inf <= tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    policy = StochasticPolicy.uniform(mdp.num_states, mdp.num_actions)
    actions = None
    for _ in range(mdp.num_states * mdp.num_actions + 64):
        v = policy_evaluation(mdp, policy, tol)
        new_actions = np.argmax(q_values(mdp, v), axis=1)
        if actions is not None and np.array_equal(new_actions, actions):
            break
        actions = new_actions
        policy = StochasticPolicy.deterministic(actions, mdp.num_actions)
    v = policy_evaluation(mdp, policy, tol)
    residual = np.abs(q_values(mdp, v).max(axis=1) - v).max()
    if residual > tol:
        raise RuntimeError(f"policy iteration residual {residual:.3e} above tol {tol:.3e}")
    return v


def bellman_residual(mdp: FiniteMdp, policy: StochasticPolicy, values: np.ndarray) -> float:
    """Greedy-improvement error ``sup_s |(T_pi V)(s) - (T V)(s)|``."""
    _check_policy_dims(mdp, policy)
    q = q_values(mdp, values)
    t_pi_v = np.einsum("sa,sa->s", policy.probs, q)
    t_v = q.max(axis=1)
    return float(np.abs(t_v - t_pi_v).max())


def tv_distance_policies(a: StochasticPolicy, b: StochasticPolicy) -> float:
    """Worst-case per-state total variation distance between two policies."""
    if a.probs.shape != b.probs.shape:
        raise DimensionMismatchError(
            f"policy shapes differ: {a.probs.shape} vs {b.probs.shape}"
        )
    return float(0.5 * np.abs(a.probs - b.probs).sum(axis=1).max())


def mix_policies(
    policy: StochasticPolicy, greedy: StochasticPolicy, alpha: float
) -> StochasticPolicy:
    """Conservative update ``(1 - alpha) pi + alpha pi_g``."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if policy.probs.shape != greedy.probs.shape:
        raise DimensionMismatchError("policies must share a shape")
    return StochasticPolicy((1.0 - alpha) * policy.probs + alpha * greedy.probs)
