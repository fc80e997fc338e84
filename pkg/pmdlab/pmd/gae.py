"""
Generalized advantage estimation over tabular rollouts.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from pmdlab.errors import InputError, NumericalError
from pmdlab.mdp.rollouts import Trajectory


@dataclass(frozen=True)
class CriticTable:
    """Tabular baseline V_hat[s]."""
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.ndim != 1 or not np.all(np.isfinite(self.values)):
            raise NumericalError("critic values must be a finite vector")

    @classmethod
    def zeros(cls, num_states: int) -> "CriticTable":
        return cls(np.zeros(num_states))

    @property
    def num_states(self) -> int:
        return self.values.size


def gae_advantages(traj: Trajectory, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """GAE(lambda) along one trajectory.

    Bootstraps from the true successor state at every step; the lambda-chain
    is cut at resets and at the end of the unroll.
    """
    deltas = traj.rewards + gamma * values[traj.next_states] - values[traj.states]
    adv = np.empty_like(deltas)
    running = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        carry = 0.0 if traj.resets[t] or t == len(deltas) - 1 else running
        running = deltas[t] + gamma * lam * carry
        adv[t] = running
    return adv


def estimate_q_gae(trajectories: List[Trajectory], critic: CriticTable, num_actions: int, gamma: float,
                   lam: float, critic_lr: float = 0.5) -> Tuple[np.ndarray, CriticTable]:
    """Tabular Q_hat from GAE advantages, and the critic moved toward the lambda-returns.

    Q_hat(s, a) = V_hat(s) + mean advantage over visits of (s, a); pairs that
    were never visited keep Q_hat(s, a) = V_hat(s). Each visited state's
    critic entry moves a `critic_lr` fraction toward its mean lambda-return.
    """
    if not trajectories or sum(len(t) for t in trajectories) == 0:
        raise InputError("empty trajectory batch")
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"gae lambda must lie in [0, 1], got {lam}")
    values = critic.values
    S = critic.num_states

    states = np.concatenate([t.states for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    advantages = np.concatenate([gae_advantages(t, values, gamma, lam) for t in trajectories])
    if np.any(states >= S) or np.any(actions >= num_actions):
        raise InputError("trajectory indices exceed the critic/action table")

    pair = states * num_actions + actions
    counts = np.bincount(pair, minlength=S * num_actions).reshape(S, num_actions)
    sums = np.bincount(pair, weights=advantages, minlength=S * num_actions).reshape(S, num_actions)
    mean_adv = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    q_hat = values[:, None] + mean_adv

    returns = advantages + values[states]
    state_counts = np.bincount(states, minlength=S)
    state_returns = np.bincount(states, weights=returns, minlength=S)
    target = np.divide(state_returns, state_counts, out=values.copy(), where=state_counts > 0)
    new_values = values + critic_lr * (target - values)
    if not np.all(np.isfinite(q_hat)):
        raise NumericalError("GAE produced non-finite Q estimates")
    return q_hat, CriticTable(new_values)
