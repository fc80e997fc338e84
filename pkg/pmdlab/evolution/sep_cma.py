"""
Separable CMA-ES: pycma's CMAEvolutionStrategy with the covariance matrix
restricted to its diagonal (option ``CMA_diagonal``).

pycma minimizes, so fitness is negated on the way in. Failed candidates
(NaN or infinite fitness) are told as slightly worse than the worst finite
one. A generation whose candidates all tie carries no ranking information;
it is skipped and the search distribution stays where it was.

Sampling draws from a Philox stream carried inside the pickled strategy, so
a run resumed from a checkpoint proposes the same candidates as an
uninterrupted one.
"""
import base64
import logging
import pickle
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import cma
import numpy as np

from pmdlab.errors import ArtifactError, InputError
from pmdlab.evolution.openai_es import SEED_BOUND, generation_rng

logger = logging.getLogger(__name__)

MIN_POPULATION = 4


class PhiloxNormal:
    """Drop-in for np.random.randn(rows, cols) that travels with the pickle."""

    def __init__(self, seed: int):
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xC3A])))

    def __call__(self, *shape: int) -> np.ndarray:
        return self.rng.standard_normal(shape)


def cma_options(population_size: int, seed: int) -> Dict[str, Any]:
    return {
        "CMA_diagonal": True,
        "popsize": population_size,
        "randn": PhiloxNormal(seed),
        # only consulted when sampling from np.random's global state
        "seed": None,
        # also silences display and data logging
        "verbose": -9,
    }


@dataclass
class SepCmaState:
    """A pycma strategy plus the generation counter and seed around it."""
    es: cma.CMAEvolutionStrategy
    generation: int = 0
    seed: int = 0

    @classmethod
    def initial(cls, x0, sigma: float, seed: int = 0, population_size: int = MIN_POPULATION) -> "SepCmaState":
        x0 = np.array(x0, dtype=np.float64)
        if x0.ndim != 1 or x0.size < 1:
            raise InputError(f"initial mean must be a nonempty vector, got shape {x0.shape}")
        if sigma <= 0:
            raise InputError(f"sigma must be positive, got {sigma}")
        if population_size < MIN_POPULATION:
            raise InputError(f"sep-CMA needs a population of at least {MIN_POPULATION}, got {population_size}")
        es = cma.CMAEvolutionStrategy(x0, float(sigma), cma_options(population_size, seed))
        return cls(es=es, seed=seed)

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.es.mean, dtype=np.float64)

    @property
    def sigma(self) -> float:
        return float(self.es.sigma)

    @property
    def stds(self) -> np.ndarray:
        """Per-coordinate standard deviations sigma * sqrt(diag C)."""
        return np.asarray(self.es.stds, dtype=np.float64)

    @property
    def population_size(self) -> int:
        return int(self.es.popsize)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "sigma": self.sigma,
            "stds": self.stds.tolist(),
            "generation": self.generation,
            "seed": self.seed,
            "es": base64.b64encode(self.es.pickle_dumps()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SepCmaState":
        try:
            es = pickle.loads(base64.b64decode(data["es"]))
        except (KeyError, TypeError, ValueError, EOFError, AttributeError, ImportError, pickle.UnpicklingError) as e:
            raise ArtifactError(f"checkpoint holds no usable sep-CMA strategy: {e}") from e
        if not isinstance(es, cma.CMAEvolutionStrategy):
            raise ArtifactError(f"checkpoint strategy is a {type(es).__name__}, not a CMAEvolutionStrategy")
        return cls(es=es, generation=int(data["generation"]), seed=int(data["seed"]))


@dataclass
class CmaProposal:
    candidates: np.ndarray
    seeds: List[int]


def losses_from_fitness(fitness: np.ndarray) -> Optional[np.ndarray]:
    """Negated fitness for pycma, or None when the generation cannot be ranked."""
    failed = ~np.isfinite(fitness)
    if failed.all():
        return None
    losses = -fitness
    losses[failed] = losses[~failed].max() + 1.0
    if np.ptp(losses) == 0.0:
        return None
    return losses


class SepCMAES:
    """Ask/tell driver around SepCmaState; fitness is maximized."""

    def __init__(self, state: SepCmaState, population_size: int):
        if population_size != state.population_size:
            raise InputError(f"strategy was built for a population of {state.population_size}, "
                             f"got {population_size}")
        self.state = state
        self._pending: Optional[CmaProposal] = None

    @property
    def population_size(self) -> int:
        return self.state.population_size

    @property
    def recombination_weights(self) -> np.ndarray:
        """Positive weights over the best parents, largest first."""
        return np.asarray(self.state.es.sp.weights.positive_weights, dtype=np.float64)

    def ask(self) -> CmaProposal:
        if self._pending is not None:
            raise InputError("a population has already been asked for")
        st = self.state
        candidates = np.array(st.es.ask(), dtype=np.float64)
        seeds = generation_rng(st.seed, st.generation).integers(0, SEED_BOUND, size=self.population_size)
        self._pending = CmaProposal(candidates=candidates, seeds=[int(s) for s in seeds])
        return self._pending

    def tell(self, fitness) -> None:
        if self._pending is None:
            raise InputError("tell() called before ask()")
        fitness = np.array(fitness, dtype=np.float64)
        if fitness.shape != (self.population_size,):
            raise InputError(f"expected {self.population_size} fitness values, got {fitness.shape}")

        losses = losses_from_fitness(fitness)
        if losses is None:
            logger.warning("Generation %d: fitness is flat, distribution left unchanged", self.state.generation + 1)
        else:
            self.state.es.tell(list(self._pending.candidates), losses.tolist())
        self.state.generation += 1
        self._pending = None


def sep_cma_step(state: SepCmaState, fitness: Callable[[np.ndarray, int], float],
                 population_size: int) -> SepCmaState:
    """One generation with fitness(params, seed) evaluated sequentially."""
    es = SepCMAES(state, population_size)
    proposal = es.ask()
    es.tell([fitness(x, seed) for x, seed in zip(proposal.candidates, proposal.seeds)])
    return es.state
