"""
Checks of the quasi-monotone improvement and convergence bounds along a
recorded PMD run.
"""
import logging
from typing import Optional

import numpy as np

from pmdlab.errors import DomainError, InputError
from pmdlab.mdp.tabular import (TabularMdp, TabularPolicy, exact_v, optimal_policy_oracle, value_of,
                                visitation_distribution)
from pmdlab.mirror.divergence import bregman
from pmdlab.mirror.potentials import OmegaPotential
from pmdlab.models.schemas import PmdRunRecord, TheoremReport

logger = logging.getLogger(__name__)


def initial_divergence(mdp: TabularMdp, pot: OmegaPotential, pi_star: TabularPolicy, d_star: np.ndarray,
                       initial: np.ndarray) -> float:
    """D*_0 = sum_s d*(s) D_h(pi*_s, pi^0_s); inf when undefined."""
    try:
        per_state = bregman(pot, pi_star.probs, initial)
    except DomainError:
        return float("inf")
    total = float(d_star @ per_state)
    return total if np.isfinite(total) else float("inf")


def theorem1_check(record: PmdRunRecord, mdp: TabularMdp, pot: OmegaPotential,
                   pi_star: Optional[TabularPolicy] = None, d_star: Optional[np.ndarray] = None,
                   tolerance: float = 1e-8) -> TheoremReport:
    """Evaluate both bounds at every iteration of `record`.

    Per-step: V^{t+1}(mu) - V^t(mu) >= -err_t * dist_t / (1 - gamma).
    Per-prefix T: V*(mu) - mean_{t<T} V^t(mu)
        <= (D*_0 / (eta (1 - gamma)) + 1 / (1 - gamma)^2) / T + 4 max_{t<T} err_t / (1 - gamma)^2.
    An infinite D*_0 makes the convergence bound vacuous, which is reported
    rather than counted as a violation.
    """
    T = record.num_iterations
    if T == 0:
        raise InputError("record has no iterations")
    if not record.initial_policy:
        raise InputError("record lacks its initial policy")
    gamma = mdp.gamma
    if abs(record.gamma - gamma) > 1e-12:
        raise InputError(f"record was produced with gamma={record.gamma}, MDP has {gamma}")

    if pi_star is None:
        pi_star, v_star = optimal_policy_oracle(mdp)
        optimal_value = value_of(v_star, mdp.start_dist)
    else:
        optimal_value = value_of(exact_v(mdp, pi_star), mdp.start_dist)
    if d_star is None:
        d_star = visitation_distribution(mdp, pi_star)

    values = np.asarray(record.value + [record.final_value])
    errors = np.asarray(record.q_error)

    monotone_lhs = np.diff(values)
    monotone_rhs = np.asarray(record.monotone_bound)
    monotone_violations = [int(t) for t in np.nonzero(monotone_lhs < monotone_rhs - tolerance)[0]]

    d_star_0 = initial_divergence(mdp, pot, pi_star, d_star, np.asarray(record.initial_policy))
    vacuous = not np.isfinite(d_star_0)
    prefix = np.arange(1, T + 1)
    convergence_lhs = optimal_value - np.cumsum(values[:-1]) / prefix
    running_error = np.maximum.accumulate(errors)
    floor = 4.0 * running_error / (1.0 - gamma) ** 2
    if vacuous:
        convergence_rhs = np.full(T, np.inf)
        convergence_violations = []
    else:
        transient = d_star_0 / (record.eta * (1.0 - gamma)) + 1.0 / (1.0 - gamma) ** 2
        convergence_rhs = transient / prefix + floor
        convergence_violations = [int(t) for t in np.nonzero(convergence_lhs > convergence_rhs + tolerance)[0]]

    if monotone_violations or convergence_violations:
        logger.warning("Bound check on %s: %d monotone and %d convergence violations", record.potential,
                       len(monotone_violations), len(convergence_violations))
    return TheoremReport(
        monotone_lhs=monotone_lhs.tolist(), monotone_rhs=monotone_rhs.tolist(),
        monotone_violations=monotone_violations,
        convergence_lhs=convergence_lhs.tolist(), convergence_rhs=convergence_rhs.tolist(),
        convergence_violations=convergence_violations,
        d_star_0=d_star_0, error_floor=float(floor[-1]), optimal_value=optimal_value,
        vacuous=vacuous, tolerance=tolerance,
    )
