"""
Trajectory sampling from tabular MDPs.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from pmdlab.errors import InputError
from pmdlab.mdp.tabular import TabularMdp, TabularPolicy


@dataclass
class Trajectory:
    """One environment's rollout of `unroll_length` steps.

    `next_states[t]` is the true successor of (states[t], actions[t]);
    `resets[t]` marks that the environment was reset to mu afterwards, so
    states[t + 1] does not follow next_states[t].
    """
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    resets: np.ndarray
    end_state: int = -1

    def __post_init__(self):
        n = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.next_states) == len(self.resets) == n):
            raise InputError("trajectory sequences must have equal lengths")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final_state(self) -> int:
        """State the environment continues from after the last step."""
        return self.end_state if self.end_state >= 0 else int(self.next_states[-1])


def _sample_index(cumulative: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling, one row of `cumulative` per uniform in `u`."""
    idx = (cumulative < u[:, None]).sum(axis=1)
    return np.minimum(idx, cumulative.shape[1] - 1)


def sample_rollouts(mdp: TabularMdp, policy: TabularPolicy, num_envs: int, unroll_length: int,
                    rng_seed: Union[int, Sequence[int]], reset_prob: float = 0.0,
                    start_states: Optional[np.ndarray] = None) -> List[Trajectory]:
    """Roll out `num_envs` continuing environments for `unroll_length` steps.

    Every environment draws from its own Philox stream spawned from
    `rng_seed`, so the batch is independent of how it is vectorised.
    """
    if num_envs < 1 or unroll_length < 1:
        raise InputError("num_envs and unroll_length must be at least 1")
    if not 0.0 <= reset_prob < 1.0:
        raise InputError(f"reset_prob must lie in [0, 1), got {reset_prob}")
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InputError("policy does not match the MDP")

    streams = np.random.SeedSequence(rng_seed).spawn(num_envs)
    # Per step: action, transition, reset coin, reset state. Plus one start draw.
    draws = np.stack([
        np.random.Generator(np.random.Philox(child)).random(4 * unroll_length + 1)
        for child in streams
    ])

    cum_mu = np.cumsum(mdp.start_dist)[None, :]
    cum_pi = np.cumsum(policy.probs, axis=1)
    cum_p = np.cumsum(mdp.transition, axis=2)

    if start_states is None:
        states = _sample_index(np.repeat(cum_mu, num_envs, axis=0), draws[:, 0])
    else:
        states = np.asarray(start_states, dtype=np.int64)
        if states.shape != (num_envs,):
            raise InputError(f"start_states must have shape ({num_envs},)")

    S_t = np.empty((num_envs, unroll_length), dtype=np.int64)
    A_t = np.empty_like(S_t)
    R_t = np.empty((num_envs, unroll_length))
    N_t = np.empty_like(S_t)
    D_t = np.zeros((num_envs, unroll_length), dtype=bool)

    for t in range(unroll_length):
        u = draws[:, 1 + 4 * t: 5 + 4 * t]
        actions = _sample_index(cum_pi[states], u[:, 0])
        next_states = _sample_index(cum_p[states, actions], u[:, 1])
        S_t[:, t] = states
        A_t[:, t] = actions
        R_t[:, t] = mdp.reward[states, actions]
        N_t[:, t] = next_states
        reset = u[:, 2] < reset_prob
        D_t[:, t] = reset
        restart = _sample_index(np.repeat(cum_mu, num_envs, axis=0), u[:, 3])
        states = np.where(reset, restart, next_states)

    return [
        Trajectory(states=S_t[e], actions=A_t[e], rewards=R_t[e], next_states=N_t[e], resets=D_t[e],
                   end_state=int(states[e]))
        for e in range(num_envs)
    ]


def carried_states(trajectories: List[Trajectory]) -> np.ndarray:
    """Where each environment continues from in the next batch."""
    return np.array([t.final_state for t in trajectories], dtype=np.int64)


def empirical_state_frequencies(trajectories: List[Trajectory], num_states: int) -> np.ndarray:
    """Fraction of transitions that started in each state."""
    states = np.concatenate([t.states for t in trajectories])
    if states.size == 0:
        raise InputError("empty trajectory batch")
    return np.bincount(states, minlength=num_states) / states.size
