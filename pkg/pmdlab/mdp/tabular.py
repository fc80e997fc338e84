"""
Exact tabular MDP machinery: evaluation, visitation distributions and the
value-iteration oracle.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from pmdlab.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
POLICY_TOL = 1e-10


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for every stochastic operation."""
    return np.random.Generator(np.random.Philox(seed))


class TabularMdp:
    """Finite MDP (S, A, P, r, gamma, mu) with a dense transition tensor."""

    def __init__(self, transition: np.ndarray, reward: np.ndarray, gamma: float, start_dist: np.ndarray):
        self.transition = np.asarray(transition, dtype=np.float64)
        self.reward = np.asarray(reward, dtype=np.float64)
        self.gamma = float(gamma)
        self.start_dist = np.asarray(start_dist, dtype=np.float64)
        self.validate()

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def validate(self) -> None:
        """Raise InputError unless every MDP invariant holds."""
        P, r, mu = self.transition, self.reward, self.start_dist
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise InputError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if r.shape != (S, A):
            raise InputError(f"reward must have shape {(S, A)}, got {r.shape}")
        if mu.shape != (S,):
            raise InputError(f"start_dist must have shape {(S,)}, got {mu.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise InputError("transition rows must be probability vectors")
        if np.any(r < 0) or np.any(r > 1):
            raise InputError("rewards must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise InputError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > STOCHASTIC_TOL:
            raise InputError("start_dist must be a probability vector")

    def __repr__(self) -> str:
        return f"TabularMdp(S={self.num_states}, A={self.num_actions}, gamma={self.gamma})"


class TabularPolicy:
    """Row-stochastic |S| x |A| matrix of action probabilities."""

    def __init__(self, probs: np.ndarray):
        self.probs = np.asarray(probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise InputError(f"policy must be a matrix, got shape {self.probs.shape}")
        if np.any(self.probs < 0) or np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > POLICY_TOL:
            raise InputError("policy rows must be probability vectors")

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def tolist(self):
        return self.probs.tolist()


def uniform_policy(num_states: int, num_actions: int) -> TabularPolicy:
    return TabularPolicy(np.full((num_states, num_actions), 1.0 / num_actions))


def greedy_policy(q: np.ndarray) -> TabularPolicy:
    """Deterministic policy picking the first maximizing action per state."""
    probs = np.zeros_like(q, dtype=np.float64)
    probs[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return TabularPolicy(probs)


def random_policy(num_states: int, num_actions: int, seed: int) -> TabularPolicy:
    rng = make_rng(seed)
    return TabularPolicy(rng.dirichlet(np.ones(num_actions), size=num_states))


def random_mdp(num_states: int, num_actions: int, gamma: float, seed: int,
               branching: Optional[int] = None) -> TabularMdp:
    """Garnet-style random MDP.

    Each (s, a) connects to `branching` distinct successor states with
    Dirichlet-distributed probabilities; rewards are uniform in [0, 1].
    """
    rng = make_rng(seed)
    b = num_states if branching is None else branching
    if not 1 <= b <= num_states:
        raise InputError(f"branching must lie in [1, {num_states}], got {b}")
    P = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            connected = rng.choice(num_states, size=b, replace=False)
            P[s, a, connected] = rng.dirichlet(np.ones(b))
    P /= P.sum(axis=2, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    mu = rng.dirichlet(np.ones(num_states))
    mu /= mu.sum()
    return TabularMdp(P, reward, gamma, mu)


def _check_dims(mdp: TabularMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InputError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})"
        )


def policy_transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """P^pi over state-action pairs: entry ((s,a),(s',a')) = pi(a'|s') P(s'|s,a)."""
    _check_dims(mdp, policy)
    S, A = mdp.num_states, mdp.num_actions
    P_pi = np.einsum("sat,tb->satb", mdp.transition, policy.probs)
    return P_pi.reshape(S * A, S * A)


def policy_averaged(mdp: TabularMdp, policy: TabularPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """State-level transition matrix and reward vector under `policy`."""
    _check_dims(mdp, policy)
    P_s = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r_s = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    return P_s, r_s


def _solve(matrix: np.ndarray, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
    try:
        lu_piv = linalg.lu_factor(matrix, check_finite=True)
        return linalg.lu_solve(lu_piv, rhs, trans=1 if transpose else 0)
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"linear solve failed: {e}") from e


def exact_q(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Q^pi = (I - gamma P^pi)^{-1} r, by a dense LU solve."""
    S, A = mdp.num_states, mdp.num_actions
    P_pi = policy_transition_matrix(mdp, policy)
    system = np.eye(S * A) - mdp.gamma * P_pi
    rhs = mdp.reward.reshape(-1)
    q = _solve(system, rhs)
    if not np.all(np.isfinite(q)):
        raise NumericalError("Q solve produced non-finite values")
    return q.reshape(S, A)


def exact_v(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """V^pi[s] = sum_a pi(a|s) Q^pi(s, a)."""
    return np.einsum("sa,sa->s", policy.probs, exact_q(mdp, policy))


def value_of(v: np.ndarray, dist: np.ndarray) -> float:
    """V^pi(dist) = sum_s dist(s) V^pi(s)."""
    v = np.asarray(v)
    dist = np.asarray(dist)
    if v.shape != dist.shape:
        raise InputError(f"value vector {v.shape} and distribution {dist.shape} differ in shape")
    return float(dist @ v)


def visitation_distribution(mdp: TabularMdp, policy: TabularPolicy,
                            start: Optional[np.ndarray] = None) -> np.ndarray:
    """Discounted state visitation d = (1-gamma) start^T (I - gamma P_pi)^{-1}."""
    start = mdp.start_dist if start is None else np.asarray(start, dtype=np.float64)
    if start.shape != (mdp.num_states,):
        raise InputError(f"start distribution must have shape ({mdp.num_states},)")
    P_s, _ = policy_averaged(mdp, policy)
    # d^T (I - gamma P) = (1 - gamma) start^T, solved as a transposed system.
    d = _solve(np.eye(mdp.num_states) - mdp.gamma * P_s, (1.0 - mdp.gamma) * start, transpose=True)
    return d


def bellman_optimality(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """Q-values of the one-step lookahead r + gamma P v."""
    return mdp.reward + mdp.gamma * mdp.transition @ v


def optimal_policy_oracle(mdp: TabularMdp, tol: float = 1e-9,
                          max_iterations: int = 1_000_000) -> Tuple[TabularPolicy, np.ndarray]:
    """Value iteration until the Bellman residual certifies `tol` accuracy.

    Stops once ||T v - v||_inf <= tol (1-gamma)/gamma, so the returned values
    are within tol of V* in sup norm.
    """
    if tol <= 0:
        raise InputError(f"tol must be positive, got {tol}")
    v = np.zeros(mdp.num_states)
    if mdp.gamma == 0.0:
        q = mdp.reward.copy()
        return greedy_policy(q), q.max(axis=1)
    threshold = tol * (1.0 - mdp.gamma) / mdp.gamma
    for iteration in range(max_iterations):
        q = bellman_optimality(mdp, v)
        v_next = q.max(axis=1)
        residual = np.max(np.abs(v_next - v))
        v = v_next
        if residual <= threshold:
            logger.debug("Value iteration converged after %d sweeps", iteration + 1)
            break
    else:
        raise NumericalError(f"value iteration did not reach tol={tol} in {max_iterations} sweeps")
    return greedy_policy(bellman_optimality(mdp, v)), v


def performance_difference(mdp: TabularMdp, pi: TabularPolicy, pi_prime: TabularPolicy,
                           dist: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Both sides of the performance difference identity.

    Returns (V^pi(dist) - V^pi'(dist),
             1/(1-gamma) sum_s d^pi(s) <Q^pi'_s, pi_s - pi'_s>).
    """
    dist = mdp.start_dist if dist is None else dist
    lhs = value_of(exact_v(mdp, pi), dist) - value_of(exact_v(mdp, pi_prime), dist)
    d_pi = visitation_distribution(mdp, pi, dist)
    q_prime = exact_q(mdp, pi_prime)
    inner = np.einsum("sa,sa->s", q_prime, pi.probs - pi_prime.probs)
    rhs = float(d_pi @ inner) / (1.0 - mdp.gamma)
    return lhs, rhs
