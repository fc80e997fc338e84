"""
Per-state PMD policy updates: the exact closed form with a normalization
constant, and gradient ascent on softmax logits.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pmdlab.errors import InputError, NumericalError
from pmdlab.mdp.tabular import TabularMdp, TabularPolicy
from pmdlab.mirror.potentials import OmegaPotential, effective_potential

logger = logging.getLogger(__name__)

BISECTION_STEPS = 100
MAX_BRACKET_DOUBLINGS = 60


@dataclass
class Normalized:
    """Rows sigma(phi(z + lambda)) together with their normalization constants."""
    probs: np.ndarray
    lambdas: np.ndarray
    fallback_used: bool = False


def _row_sums(z: np.ndarray, lam: np.ndarray, pot: OmegaPotential) -> np.ndarray:
    return np.maximum(pot.phi(z + lam[:, None]), 0.0).sum(axis=1)


def _bracket(z: np.ndarray, pot: OmegaPotential):
    """Initial [lo, hi] with row sums <= 1 at lo and >= 1 at hi, doubled until it holds."""
    num_actions = z.shape[1]
    top = z.max(axis=1)
    inv_uniform = float(pot.phi_inv(np.array([1.0 / num_actions]))[0])
    inv_one = float(pot.phi_inv(np.array([1.0]))[0])
    lo = inv_uniform - top - 1.0
    hi = inv_one - top + 1.0
    width = np.maximum(hi - lo, 1.0)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        low_bad = _row_sums(z, lo, pot) > 1.0
        high_bad = _row_sums(z, hi, pot) < 1.0
        if not (low_bad.any() or high_bad.any()):
            return lo, hi
        lo = np.where(low_bad, lo - width, lo)
        hi = np.where(high_bad, hi + width, hi)
        width = width * 2.0
    return None


def normalize_rows(z, pot: OmegaPotential) -> Normalized:
    """Solve sum_a max(phi(z[s, a] + lambda_s), 0) = 1 for every state at once.

    Bisection runs a fixed number of halvings so that two potentials which
    agree on the relevant range follow the same path. If no bracket exists
    (phi saturating below 1), the augmented counterpart of a piecewise
    potential is used instead and `fallback_used` is set.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 1:
        raise InputError(f"expected an |S| x |A| matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z.max(axis=1))) or np.any(np.isnan(z)):
        raise NumericalError("row scores must be finite (or -inf for excluded actions)")

    fallback_used = False
    bracket = _bracket(z, pot)
    if bracket is None:
        augmented = effective_potential(pot)
        if augmented is None:
            raise NumericalError(f"could not bracket the normalization constant for {pot.name}")
        logger.warning("Normalization of %s failed to bracket; using augmented tails", pot.name)
        pot = augmented
        fallback_used = True
        bracket = _bracket(z, pot)
        if bracket is None:
            raise NumericalError("normalization failed even with augmented tails")

    lo, hi = bracket
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        below = _row_sums(z, mid, pot) < 1.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    lambdas = 0.5 * (lo + hi)

    probs = np.maximum(pot.phi(z + lambdas[:, None]), 0.0)
    sums = probs.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > 1e-6) or not np.all(np.isfinite(probs)):
        raise NumericalError(f"normalization did not converge (max row error {np.max(np.abs(sums - 1.0)):.3g})")
    return Normalized(probs=probs / sums, lambdas=lambdas, fallback_used=fallback_used)


def mirror_coordinates(probs: np.ndarray, pot: OmegaPotential, prob_floor: float = 1e-8) -> np.ndarray:
    """phi^{-1}(pi), clamping probabilities first when phi^{-1}(0) is -inf."""
    if np.isneginf(pot.phi_inv_at_zero):
        probs = np.maximum(probs, prob_floor)
    return pot.phi_inv(probs)


def closed_form_step(probs: np.ndarray, q_hat: np.ndarray, pot: OmegaPotential, eta: float,
                     prob_floor: float = 1e-8) -> Normalized:
    """pi+ = sigma(phi(phi^{-1}(pi) + eta Q + lambda)), row by row."""
    if eta < 0:
        raise InputError(f"eta must be nonnegative, got {eta}")
    q_hat = np.asarray(q_hat, dtype=np.float64)
    if q_hat.shape != probs.shape:
        raise InputError(f"Q estimate shape {q_hat.shape} does not match policy {probs.shape}")
    return normalize_rows(mirror_coordinates(probs, pot, prob_floor) + eta * q_hat, pot)


def pmd_update_closed_form(mdp: TabularMdp, policy: TabularPolicy, q_hat: np.ndarray, pot: OmegaPotential,
                           eta: float, prob_floor: float = 1e-8) -> TabularPolicy:
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InputError("policy does not match the MDP")
    return TabularPolicy(closed_form_step(policy.probs, q_hat, pot, eta, prob_floor).probs)


# ============================================================================
# Inner gradient ascent on logits
# ============================================================================

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def inner_objective(logits: np.ndarray, anchor_probs: np.ndarray, q_hat: np.ndarray, pot: OmegaPotential,
                    eta: float, state_weights: np.ndarray) -> float:
    """sum_s w(s) [eta <Q_s, pi_s> - D_h(pi_s, anchor_s)] at pi = softmax(logits)."""
    probs = softmax(logits)
    anchor_inv = pot.phi_inv(anchor_probs)
    bregman = (pot.integral(probs) - pot.integral(anchor_probs) - anchor_inv * (probs - anchor_probs)).sum(axis=1)
    gain = eta * np.einsum("sa,sa->s", q_hat, probs)
    return float(state_weights @ (gain - bregman))


def pmd_update_inner_sgd(mdp: TabularMdp, logits: np.ndarray, q_hat: np.ndarray, pot: OmegaPotential,
                         eta: float, epochs: int, lr: float, state_weights: np.ndarray,
                         prob_floor: float = 1e-8,
                         anchor_logits: Optional[np.ndarray] = None) -> np.ndarray:
    """Full-batch gradient ascent on the weighted PMD objective through a softmax.

    The Bregman anchor pi^t is softmax(anchor_logits), defaulting to the
    starting logits. Returns new logits; the inputs are not modified.
    """
    logits = np.array(logits, dtype=np.float64)
    q_hat = np.asarray(q_hat, dtype=np.float64)
    state_weights = np.asarray(state_weights, dtype=np.float64)
    S, A = mdp.num_states, mdp.num_actions
    if logits.shape != (S, A) or q_hat.shape != (S, A):
        raise InputError(f"logits and Q estimate must have shape {(S, A)}")
    if state_weights.shape != (S,) or np.any(state_weights < 0):
        raise InputError("state_weights must be a nonnegative vector over states")
    if epochs < 0:
        raise InputError(f"epochs must be nonnegative, got {epochs}")

    anchor = softmax(logits if anchor_logits is None else np.asarray(anchor_logits, dtype=np.float64))
    anchor_inv = mirror_coordinates(anchor, pot, prob_floor)
    for epoch in range(epochs):
        probs = softmax(logits)
        # d/dpi of eta <Q, pi> - D_h(pi, pi^t)
        grad_probs = state_weights[:, None] * (eta * q_hat - (mirror_coordinates(probs, pot, prob_floor) - anchor_inv))
        centered = grad_probs - np.einsum("sa,sa->s", probs, grad_probs)[:, None]
        grad_logits = probs * centered
        if not np.all(np.isfinite(grad_logits)):
            raise NumericalError(f"non-finite inner gradient at epoch {epoch}")
        logits += lr * grad_logits
    return logits
