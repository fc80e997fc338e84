"""
Tabular AMPO: policies induced by a score table, with the score regression
solved exactly.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from pmdlab.errors import InputError, NumericalError
from pmdlab.mdp.tabular import TabularMdp, TabularPolicy, exact_q, value_of
from pmdlab.mirror.potentials import OmegaPotential
from pmdlab.models.schemas import PmdConfig, PmdRunRecord
from pmdlab.pmd.runner import QEstimator, new_record, record_iteration, update_distance
from pmdlab.pmd.updates import normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreTable:
    """Tabular scoring function f(s, a)."""
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.scores.ndim != 2 or not np.all(np.isfinite(self.scores)):
            raise NumericalError("scores must be a finite |S| x |A| matrix")

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> "ScoreTable":
        return cls(np.zeros((num_states, num_actions)))


def ampo_policy_from_scores(scores: ScoreTable, pot: OmegaPotential, eta: float) -> Tuple[TabularPolicy, np.ndarray]:
    """pi(a|s) = max(phi(eta f(s, a) + lambda_s), 0) with lambda_s normalizing each row."""
    policy, lambdas, _ = _policy_from_scores(scores, pot, eta)
    return policy, lambdas


def _policy_from_scores(scores: ScoreTable, pot: OmegaPotential, eta: float):
    if eta <= 0:
        raise InputError(f"eta must be positive, got {eta}")
    result = normalize_rows(eta * scores.scores, pot)
    return TabularPolicy(result.probs), result.lambdas, result.fallback_used


def ampo_score_update(scores: ScoreTable, q: np.ndarray, lambdas: np.ndarray, pot: OmegaPotential,
                      eta: float) -> ScoreTable:
    """f'(s, a) = Q(s, a) + max(eta f(s, a) + lambda_s, phi^{-1}(0)) / eta.

    This is the exact minimizer of the score regression in the tabular case.
    When phi^{-1}(0) is -inf the max is always its first argument.
    """
    q = np.asarray(q, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if q.shape != scores.scores.shape or lambdas.shape != (q.shape[0],):
        raise InputError("Q, lambda and score shapes disagree")
    shifted = eta * scores.scores + lambdas[:, None]
    floor = pot.phi_inv_at_zero
    if not np.isneginf(floor):
        shifted = np.maximum(shifted, floor)
    return ScoreTable(q + shifted / eta)


def run_ampo(mdp: TabularMdp, pot: OmegaPotential, config: PmdConfig,
             initial_scores: Optional[ScoreTable] = None) -> PmdRunRecord:
    """AMPO loop sharing the record layout of run_pmd; lambdas are recorded per iteration."""
    scores = initial_scores or ScoreTable.zeros(mdp.num_states, mdp.num_actions)
    if scores.scores.shape != (mdp.num_states, mdp.num_actions):
        raise InputError("initial scores do not match the MDP")

    # The score recursion assumes one step size throughout, so schedules are ignored here.
    eta = config.eta
    policy, lambdas, fallback_used = _policy_from_scores(scores, pot, eta)
    record = new_record("ampo", mdp, pot, config, policy)
    record.lambdas = []
    estimator = QEstimator(mdp, config)

    for t in range(config.num_iterations):
        q_true = exact_q(mdp, policy)
        value = value_of(np.einsum("sa,sa->s", policy.probs, q_true), mdp.start_dist)
        q_hat, _ = estimator.estimate(policy, q_true, t)
        record.lambdas.append(lambdas.tolist())

        scores = ampo_score_update(scores, q_hat, lambdas, pot, eta)
        new_policy, lambdas, fell_back = _policy_from_scores(scores, pot, eta)
        fallback_used = fallback_used or fell_back

        q_err = float(np.abs(q_hat - q_true).max())
        record_iteration(record, estimator.steps_taken, value, q_err,
                         update_distance(new_policy.probs, policy.probs), mdp.gamma, policy.probs)
        policy = new_policy

    record.final_policy = policy.tolist()
    record.final_value = value_of(np.einsum("sa,sa->s", policy.probs, exact_q(mdp, policy)), mdp.start_dist)
    record.fallback_used = fallback_used
    logger.info("AMPO with %s finished: T=%d, V^T(mu)=%.6f", pot.name, config.num_iterations, record.final_value)
    return record
