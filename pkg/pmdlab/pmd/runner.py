"""
The PMD training loop: collect, estimate Q, update, record diagnostics.
"""
import logging
from typing import Optional, Tuple

import numpy as np

from pmdlab.errors import InputError
from pmdlab.mdp.rollouts import carried_states, empirical_state_frequencies, sample_rollouts
from pmdlab.mdp.tabular import (TabularMdp, TabularPolicy, exact_q, uniform_policy, value_of,
                                visitation_distribution)
from pmdlab.mirror.potentials import OmegaPotential
from pmdlab.models.schemas import PmdConfig, PmdRunRecord
from pmdlab.pmd.gae import CriticTable, estimate_q_gae
from pmdlab.pmd.updates import closed_form_step, pmd_update_inner_sgd, softmax

logger = logging.getLogger(__name__)


class QEstimator:
    """Produces Q_hat and state weights for successive policies of one run.

    In exact mode Q_hat is exact_q and the weights are d^pi_mu. In GAE mode
    environments continue from where the previous batch stopped and the
    critic table is carried across iterations.
    """

    def __init__(self, mdp: TabularMdp, config: PmdConfig):
        self.mdp = mdp
        self.config = config
        self.critic = CriticTable.zeros(mdp.num_states)
        self.env_states: Optional[np.ndarray] = None
        self.steps_taken = 0

    def estimate(self, policy: TabularPolicy, q_true: np.ndarray, iteration: int) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        if cfg.q_mode == "exact":
            self.steps_taken += cfg.steps_per_iteration
            return q_true, visitation_distribution(self.mdp, policy)

        trajectories = sample_rollouts(self.mdp, policy, cfg.num_envs, cfg.unroll_length,
                                       rng_seed=[cfg.seed, iteration], reset_prob=cfg.reset_prob,
                                       start_states=self.env_states)
        self.env_states = carried_states(trajectories)
        self.steps_taken += cfg.steps_per_iteration
        q_hat, self.critic = estimate_q_gae(trajectories, self.critic, self.mdp.num_actions, self.mdp.gamma,
                                            cfg.gae_lambda, cfg.critic_lr)
        return q_hat, empirical_state_frequencies(trajectories, self.mdp.num_states)


def update_distance(new: np.ndarray, old: np.ndarray) -> float:
    """max_s ||pi'_s - pi_s||_1"""
    return float(np.abs(new - old).sum(axis=1).max())


def new_record(algorithm: str, mdp: TabularMdp, pot: OmegaPotential, config: PmdConfig,
               initial: TabularPolicy) -> PmdRunRecord:
    return PmdRunRecord(algorithm=algorithm, potential=pot.name, gamma=mdp.gamma, eta=config.eta,
                        initial_policy=initial.tolist(), policies=[] if config.keep_policies else None)


def record_iteration(record: PmdRunRecord, steps: int, value: float, q_err: float, distance: float,
                     gamma: float, probs: Optional[np.ndarray] = None) -> None:
    record.steps.append(steps)
    record.value.append(value)
    record.q_error.append(q_err)
    record.update_distance.append(distance)
    # Quasi-monotone lower bound on V^{t+1}(mu) - V^t(mu).
    record.monotone_bound.append(-q_err * distance / (1.0 - gamma))
    if record.policies is not None and probs is not None:
        record.policies.append(probs.tolist())


def run_pmd(mdp: TabularMdp, pot: OmegaPotential, config: PmdConfig,
            initial_policy: Optional[TabularPolicy] = None) -> PmdRunRecord:
    """Run T policy mirror descent iterations from the uniform (or given) policy.

    Entry t of the record describes pi^t before its update; steps[t] counts
    the environment steps consumed up to and including the batch used to
    update pi^t.
    """
    policy = initial_policy or uniform_policy(mdp.num_states, mdp.num_actions)
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InputError("initial policy does not match the MDP")

    record = new_record("pmd", mdp, pot, config, policy)
    estimator = QEstimator(mdp, config)
    probs = policy.probs.copy()
    logits = np.log(np.maximum(probs, config.prob_floor))
    fallback_used = False

    for t in range(config.num_iterations):
        current = TabularPolicy(probs)
        q_true = exact_q(mdp, current)
        value = value_of(np.einsum("sa,sa->s", probs, q_true), mdp.start_dist)
        q_hat, weights = estimator.estimate(current, q_true, t)
        eta = config.eta_at(t)

        if config.update_mode == "closed_form":
            step = closed_form_step(probs, q_hat, pot, eta, config.prob_floor)
            new_probs = step.probs
            fallback_used = fallback_used or step.fallback_used
        else:
            logits = pmd_update_inner_sgd(mdp, logits, q_hat, pot, eta, config.inner_epochs, config.inner_lr,
                                          weights, config.prob_floor)
            new_probs = softmax(logits)

        q_err = float(np.abs(q_hat - q_true).max())
        record_iteration(record, estimator.steps_taken, value, q_err, update_distance(new_probs, probs),
                         mdp.gamma, probs)
        probs = new_probs

    final = TabularPolicy(probs)
    record.final_policy = final.tolist()
    record.final_value = value_of(np.einsum("sa,sa->s", probs, exact_q(mdp, final)), mdp.start_dist)
    record.fallback_used = fallback_used
    logger.info("PMD with %s finished: T=%d, V^T(mu)=%.6f", pot.name, config.num_iterations, record.final_value)
    return record
