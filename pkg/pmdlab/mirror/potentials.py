"""
omega-potentials: scalar monotone maps phi whose inverse-integral defines a
coordinate-separable mirror map h(p) = sum_a int_1^{p_a} phi^{-1}(x) dx.
"""
import logging
import warnings
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy import integrate

from pmdlab.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

# Fractional powers have infinite slope at 0; inputs below this are treated as 0.
FRACTIONAL_POWER_FLOOR = 1e-12
# log-probability bracket used when phi has to be found by inverting phi_inv.
LOG_P_MIN = -700.0
INVERSION_STEPS = 100


class OmegaPotential(ABC):
    """A monotone scalar map phi and its inverse, both vectorised over arrays."""

    family: str = "abstract"
    closed_form_phi: bool = True

    @property
    def name(self) -> str:
        return self.family

    @property
    @abstractmethod
    def phi_inv_at_zero(self) -> float:
        """phi^{-1}(0), possibly -inf."""

    @abstractmethod
    def _phi_inv_positive(self, p: np.ndarray) -> np.ndarray:
        """phi^{-1} on strictly positive arguments."""

    def phi_inv(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        out = np.full(p.shape, self.phi_inv_at_zero, dtype=np.float64)
        positive = p > 0
        if np.any(positive):
            out[positive] = self._phi_inv_positive(p[positive])
        return out

    def phi(self, x) -> np.ndarray:
        return self._phi_by_inversion(np.asarray(x, dtype=np.float64))

    def phi_inv_derivative(self, p) -> np.ndarray:
        """(phi^{-1})'(p) by central differences with a relative step."""
        p = np.asarray(p, dtype=np.float64)
        h = np.maximum(p * 1e-4, 1e-12)
        return (self.phi_inv(p + h) - self.phi_inv(p - h)) / (2 * h)

    def integral(self, p) -> np.ndarray:
        """int_1^p phi^{-1}(x) dx, elementwise."""
        return self.integral_by_quadrature(p)

    def integral_by_quadrature(self, p) -> np.ndarray:
        """Adaptive quadrature of phi^{-1}; raises NumericalError if it diverges."""
        p = np.asarray(p, dtype=np.float64)
        out = np.empty(p.shape)
        scalar_inv = lambda x: float(self._phi_inv_positive(np.array([x]))[0])
        for idx, upper in np.ndenumerate(p):
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    value, err = integrate.quad(scalar_inv, 1.0, float(upper),
                                                epsabs=1e-11, epsrel=1e-11, limit=200)
                except integrate.IntegrationWarning as e:
                    raise NumericalError(f"quadrature of phi^-1 on [{upper}, 1] diverged: {e}") from e
            if not np.isfinite(value) or err > 1e-8:
                raise NumericalError(f"quadrature of phi^-1 on [{upper}, 1] did not converge (err={err})")
            out[idx] = value
        return out

    def parameters(self) -> np.ndarray:
        return np.zeros(0)

    def _phi_by_inversion(self, x: np.ndarray) -> np.ndarray:
        """Numeric phi from phi^{-1} by bisection on log p.

        Below phi^{-1}(0) the result is 0; above phi^{-1}(1) phi continues
        linearly with slope 1 so that it stays increasing on all of R.
        """
        top = float(self.phi_inv(np.array([1.0]))[0])
        out = np.empty(x.shape)
        above = x >= top
        out[above] = 1.0 + (x[above] - top)
        below = x <= self.phi_inv_at_zero
        out[below] = 0.0
        inside = ~(above | below)
        if np.any(inside):
            target = x[inside]
            lo = np.full(target.shape, LOG_P_MIN)
            hi = np.zeros(target.shape)
            for _ in range(INVERSION_STEPS):
                mid = 0.5 * (lo + hi)
                too_small = self._phi_inv_positive(np.exp(mid)) < target
                lo = np.where(too_small, mid, lo)
                hi = np.where(too_small, hi, mid)
            out[inside] = np.exp(0.5 * (lo + hi))
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class NegEntropyPotential(OmegaPotential):
    """phi(x) = e^x; h is the negative entropy sum p log p + |A| - 1."""

    family = "negentropy"

    @property
    def phi_inv_at_zero(self) -> float:
        return -np.inf

    def phi(self, x) -> np.ndarray:
        return np.exp(np.asarray(x, dtype=np.float64))

    def _phi_inv_positive(self, p: np.ndarray) -> np.ndarray:
        return np.log(p)

    def phi_inv_derivative(self, p) -> np.ndarray:
        return 1.0 / np.asarray(p, dtype=np.float64)

    def integral(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return plogp - p + 1.0


class L2Potential(OmegaPotential):
    """phi(x) = x; h is half the squared l2 norm up to a constant."""

    family = "l2"

    @property
    def phi_inv_at_zero(self) -> float:
        return 0.0

    def phi(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).copy()

    def _phi_inv_positive(self, p: np.ndarray) -> np.ndarray:
        return p.copy()

    def phi_inv_derivative(self, p) -> np.ndarray:
        return np.ones_like(np.asarray(p, dtype=np.float64))

    def integral(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return 0.5 * (p * p - 1.0)


class PiecewisePotential(OmegaPotential):
    """Piecewise-linear phi with n knots: phi(sum_{i<=j} psi_i) = j/n.

    phi is 0 for x <= 0 and 1 beyond the last knot.
    """

    family = "piecewise"

    def __init__(self, psi):
        psi = np.asarray(psi, dtype=np.float64)
        if psi.ndim != 1 or psi.size < 1 or np.any(~np.isfinite(psi)) or np.any(psi <= 0):
            raise InputError("psi must be a nonempty vector of positive knot widths")
        self.psi = psi
        self.n = psi.size
        self.knots = np.concatenate([[0.0], np.cumsum(psi)])

    @property
    def knot_span(self) -> float:
        return float(self.knots[-1])

    @property
    def phi_inv_at_zero(self) -> float:
        return 0.0

    def _knot_phi(self, x: np.ndarray) -> np.ndarray:
        """phi on the knot range; callers handle x <= 0 and x >= span."""
        j = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.n - 1)
        return (j + (x - self.knots[j]) / self.psi[j]) / self.n

    def phi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.where(x >= self.knots[-1], 1.0, 0.0)
        inside = (x > 0) & (x < self.knots[-1])
        out[inside] = self._knot_phi(x[inside])
        return out

    def _phi_inv_positive(self, p: np.ndarray) -> np.ndarray:
        y = np.minimum(p, 1.0) * self.n
        j = np.minimum(np.floor(y).astype(np.int64), self.n - 1)
        return self.knots[j] + (y - j) * self.psi[j]

    def phi_inv_derivative(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        j = np.clip(np.floor(p * self.n).astype(np.int64), 0, self.n - 1)
        return self.n * self.psi[j]

    def _cumulative(self, p: np.ndarray) -> np.ndarray:
        """int_0^p phi^{-1}, exact for the piecewise-linear inverse."""
        segment_areas = 0.5 * (self.knots[:-1] + self.knots[1:]) / self.n
        full = np.concatenate([[0.0], np.cumsum(segment_areas)])
        p = np.clip(p, 0.0, 1.0)
        j = np.minimum(np.floor(p * self.n).astype(np.int64), self.n - 1)
        start = j / self.n
        partial = (p - start) * 0.5 * (self.knots[j] + self._phi_inv_positive(np.maximum(p, 1e-300)))
        return full[j] + partial

    def integral(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self._cumulative(p) - self._cumulative(np.array(1.0))

    def parameters(self) -> np.ndarray:
        return self.psi.copy()

    def augmented(self) -> "AugmentedPiecewisePotential":
        return AugmentedPiecewisePotential(self.psi)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, span={self.knot_span:.6g})"


class AugmentedPiecewisePotential(PiecewisePotential):
    """Strictly increasing extension of PiecewisePotential with the same psi.

    e^x - 1 below 0, the piecewise map on the knot range, and 1 + (x - span)
    beyond the last knot.
    """

    family = "augmented_piecewise"

    def phi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = self.knots[-1]
        out = np.where(x <= 0, np.expm1(np.minimum(x, 0.0)), 1.0 + (x - span))
        inside = (x > 0) & (x < span)
        out[inside] = self._knot_phi(x[inside])
        return out

    def phi_inv(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        span = self.knots[-1]
        out = np.where(p <= 0, np.log1p(np.maximum(p, -1.0 + 1e-300)), span + (p - 1.0))
        unit = (p > 0) & (p <= 1.0)
        out[unit] = self._phi_inv_positive(p[unit])
        return out

    def non_augmented(self) -> PiecewisePotential:
        return PiecewisePotential(self.psi)


# ============================================================================
# Neural phi^{-1}
# ============================================================================

ACTIVATIONS = ("cube", "relu_sq", "relu_sqrt", "relu_cbrt", "log_relu", "exp")
UNITS_PER_ACTIVATION = 21
HIDDEN_UNITS = UNITS_PER_ACTIVATION * len(ACTIVATIONS)
NEURAL_PARAM_SIZE = 3 * HIDDEN_UNITS + 3
# Guards e^x against overflow for large pre-activations.
EXP_INPUT_CAP = 50.0


def _activate(z: np.ndarray) -> np.ndarray:
    """Apply the six monotone activations to consecutive blocks of 21 units.

    z has shape (..., HIDDEN_UNITS).
    """
    k = UNITS_PER_ACTIVATION
    relu = np.maximum(z, 0.0)
    frac = np.where(relu < FRACTIONAL_POWER_FLOOR, 0.0, relu)
    out = np.empty_like(z)
    out[..., 0 * k:1 * k] = z[..., 0 * k:1 * k] ** 3
    out[..., 1 * k:2 * k] = relu[..., 1 * k:2 * k] ** 2
    out[..., 2 * k:3 * k] = np.sqrt(frac[..., 2 * k:3 * k])
    out[..., 3 * k:4 * k] = np.cbrt(frac[..., 3 * k:4 * k])
    out[..., 4 * k:5 * k] = np.log(relu[..., 4 * k:5 * k] + 1e-3)
    out[..., 5 * k:6 * k] = np.exp(np.minimum(z[..., 5 * k:6 * k], EXP_INPUT_CAP))
    return out


class MonotoneNetPotentialInv(OmegaPotential):
    """One-hidden-layer monotone network for phi^{-1} plus a*x + b*log(x).

    The raw parameter vector is unconstrained; kernels, output weights, a and
    b enter through their absolute values so phi^{-1} is nondecreasing for
    every raw vector. Layout: [kernels(126), biases(126), out_weights(126),
    a, b, out_bias]. phi itself is only available by numeric inversion.
    """

    family = "neural"
    closed_form_phi = False

    def __init__(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (NEURAL_PARAM_SIZE,):
            raise InputError(f"neural potential needs {NEURAL_PARAM_SIZE} parameters, got {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise InputError("neural potential parameters must be finite")
        self.raw = raw
        h = HIDDEN_UNITS
        self.kernels = np.abs(raw[:h])
        self.biases = raw[h:2 * h]
        self.out_weights = np.abs(raw[2 * h:3 * h])
        self.a = abs(raw[3 * h])
        self.b = abs(raw[3 * h + 1])
        self.out_bias = raw[3 * h + 2]

    def _network(self, p: np.ndarray) -> np.ndarray:
        hidden = _activate(p[..., None] * self.kernels + self.biases)
        return hidden @ self.out_weights + self.a * p + self.out_bias

    @property
    def phi_inv_at_zero(self) -> float:
        if self.b > 0:
            return -np.inf
        return float(self._network(np.array([0.0]))[0])

    def _phi_inv_positive(self, p: np.ndarray) -> np.ndarray:
        return self._network(p) + self.b * np.log(p)

    def parameters(self) -> np.ndarray:
        return self.raw.copy()

    def __repr__(self) -> str:
        return f"{type(self).__name__}(a={self.a:.4g}, b={self.b:.4g})"


# ============================================================================
# Parameterizations and registry
# ============================================================================

def negentropy_init_psi(n: int, knot_span: float = 1.0) -> np.ndarray:
    """Knot widths approximating the negative entropy.

    psi_1 = c * 3 log 10 and psi_i = c * log(i / (i - 1)) for i >= 2, with c
    chosen so that the widths sum to `knot_span`.
    """
    if n < 2:
        raise InputError(f"need at least 2 knots, got {n}")
    if knot_span <= 0:
        raise InputError(f"knot_span must be positive, got {knot_span}")
    i = np.arange(2, n + 1, dtype=np.float64)
    raw = np.concatenate([[3.0 * np.log(10.0)], np.log(i / (i - 1.0))])
    return raw * (knot_span / raw.sum())


def piecewise_from_raw(raw, knot_span: float = 1.0) -> PiecewisePotential:
    """Unconstrained vector -> psi = knot_span * normalised exp(raw)."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise InputError("piecewise parameters must be finite")
    weights = np.exp(raw - raw.max())
    psi = knot_span * weights / weights.sum()
    if np.any(psi <= 0):
        raise NumericalError("knot width underflowed to zero")
    return PiecewisePotential(psi)


def raw_from_psi(psi) -> np.ndarray:
    return np.log(np.asarray(psi, dtype=np.float64))


def near_negentropy_raw(seed: int, output_scale: float = 1e-3) -> np.ndarray:
    """Raw neural parameters with phi^{-1}(p) close to log p."""
    rng = np.random.Generator(np.random.Philox(seed))
    h = HIDDEN_UNITS
    raw = np.zeros(NEURAL_PARAM_SIZE)
    raw[:h] = rng.normal(0.0, 1.0, h)
    raw[h:2 * h] = rng.normal(0.0, 1.0, h)
    raw[2 * h:3 * h] = output_scale * rng.normal(0.0, 1.0, h)
    raw[3 * h] = 0.0
    raw[3 * h + 1] = 1.0
    return raw


def neural_from_raw(raw) -> MonotoneNetPotentialInv:
    return MonotoneNetPotentialInv(raw)


BUILTIN_POTENTIALS = ("negentropy", "l2", "piecewise", "augmented_piecewise")


def potential_from_name(name: str, num_knots: int = 100, knot_span: float = 1.0) -> OmegaPotential:
    """Builtin potentials by name; the piecewise ones start at the entropy-like knots."""
    key = name.strip().lower().replace("-", "_")
    if key in ("negentropy", "neg_entropy", "entropy"):
        return NegEntropyPotential()
    if key in ("l2", "euclidean"):
        return L2Potential()
    if key == "piecewise":
        return PiecewisePotential(negentropy_init_psi(num_knots, knot_span))
    if key in ("augmented_piecewise", "augmented"):
        return AugmentedPiecewisePotential(negentropy_init_psi(num_knots, knot_span))
    raise KeyError(f"unknown potential {name!r}; builtins are {', '.join(BUILTIN_POTENTIALS)}")


def effective_potential(pot: OmegaPotential) -> Optional[OmegaPotential]:
    """Augmented counterpart used when normalization cannot be bracketed."""
    if isinstance(pot, PiecewisePotential) and not isinstance(pot, AugmentedPiecewisePotential):
        return pot.augmented()
    return None
