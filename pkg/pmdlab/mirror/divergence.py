"""
Mirror-map values and Bregman divergences on the probability simplex.
"""
from typing import Tuple

import numpy as np

from pmdlab.errors import DomainError, InputError
from pmdlab.mirror.potentials import OmegaPotential


def mirror_map_value(pot: OmegaPotential, p, method: str = "auto") -> np.ndarray:
    """h(p) = sum_a int_1^{p_a} phi^{-1}(x) dx over the last axis.

    `method="quadrature"` forces numerical integration even when a closed
    form exists.
    """
    p = np.asarray(p, dtype=np.float64)
    if method == "auto":
        terms = pot.integral(p)
    elif method == "quadrature":
        terms = pot.integral_by_quadrature(p)
    else:
        raise InputError(f"unknown integration method {method!r}")
    return terms.sum(axis=-1)


def _check_simplex(name: str, p: np.ndarray) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-8):
        raise InputError(f"{name} must be a probability vector")


def bregman(pot: OmegaPotential, x, y) -> np.ndarray:
    """D_h(x, y) = h(x) - h(y) - <grad h(y), x - y>, row-wise over the last axis.

    Raises DomainError when y touches the boundary of the simplex and
    phi^{-1}(0) is -inf.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InputError(f"shapes {x.shape} and {y.shape} differ")
    _check_simplex("x", x)
    _check_simplex("y", y)
    if np.isneginf(pot.phi_inv_at_zero) and np.any(y <= 0):
        raise DomainError(f"Bregman divergence of {pot.name} undefined at y with zero entries")
    grad_y = pot.phi_inv(y)
    terms = pot.integral(x) - pot.integral(y) - grad_y * (x - y)
    return terms.sum(axis=-1)


def bregman_local_quadratic_check(pot: OmegaPotential, y, direction,
                                  epsilon: float = 1e-3) -> Tuple[float, float]:
    """Compare D_h(y + eps*d, y) with its second-order expansion.

    Returns (divergence, 0.5 * eps^2 * sum_a d_a^2 (phi^{-1})'(y_a)); the
    derivative is taken by central differences. `direction` must sum to 0.
    """
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if abs(d.sum()) > 1e-12:
        raise InputError("direction must sum to zero to stay on the simplex")
    x = y + epsilon * d
    if np.any(x < 0):
        raise InputError("perturbed point leaves the simplex; shrink epsilon")
    h = np.maximum(y * 1e-4, 1e-12)
    derivative = (pot.phi_inv(y + h) - pot.phi_inv(y - h)) / (2 * h)
    quadratic = 0.5 * epsilon ** 2 * float(np.sum(d * d * derivative))
    return float(bregman(pot, x, y)), quadratic
