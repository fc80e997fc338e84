"""
OpenAI-ES with antithetic pairs and a pairwise {0, 1} rank transform.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from pmdlab.errors import InputError

logger = logging.getLogger(__name__)

# fitness(params, task, seed) -> scalar; larger is better
FitnessFn = Callable[[np.ndarray, Any, int], float]
TaskSampler = Callable[[np.random.Generator], Any]

SEED_BOUND = 2 ** 31 - 1


def generation_rng(seed: int, generation: int) -> np.random.Generator:
    """Stream for one generation, so a resumed run draws the same noise."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, generation])))


@dataclass
class EsState:
    mean: np.ndarray
    sigma: float
    sigma_decay: float = 0.995
    learning_rate: float = 0.01
    generation: int = 0
    seed: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.sigma <= 0:
            raise InputError(f"sigma must be positive, got {self.sigma}")

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "sigma": self.sigma, "sigma_decay": self.sigma_decay,
                "learning_rate": self.learning_rate, "generation": self.generation, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EsState":
        return cls(mean=np.asarray(data["mean"], dtype=np.float64), sigma=float(data["sigma"]),
                   sigma_decay=float(data["sigma_decay"]), learning_rate=float(data["learning_rate"]),
                   generation=int(data["generation"]), seed=int(data["seed"]))


@dataclass
class EsProposal:
    """One generation's candidates: rows 2i and 2i+1 are mean +/- sigma * eps_i.

    Both members of a pair share their task and evaluation seed.
    """
    candidates: np.ndarray
    noise: np.ndarray = field(repr=False)
    tasks: List[Any]
    seeds: List[int]


def pairwise_ranks(f_plus: np.ndarray, f_minus: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """1 for the better member of each pair, 0 for the other, both 0 on ties.

    NaN makes a pair a tie. -inf loses against any finite value.
    """
    f_plus = np.asarray(f_plus, dtype=np.float64)
    f_minus = np.asarray(f_minus, dtype=np.float64)
    invalid = np.isnan(f_plus) | np.isnan(f_minus)
    if np.any(invalid):
        logger.warning("%d antithetic pairs had NaN fitness and count as ties", int(invalid.sum()))
    plus_wins = (f_plus > f_minus) & ~invalid
    minus_wins = (f_minus > f_plus) & ~invalid
    return plus_wins.astype(np.float64), minus_wins.astype(np.float64)


def es_gradient(noise: np.ndarray, f_plus, f_minus, sigma: float) -> np.ndarray:
    """(2 / pop) * sum_i eps_i (rank+_i - rank-_i) / (2 sigma)"""
    r_plus, r_minus = pairwise_ranks(f_plus, f_minus)
    half = noise.shape[0]
    return (noise.T @ (r_plus - r_minus)) / (2.0 * sigma) / half


class OpenAIES:
    """Ask/tell driver around EsState."""

    def __init__(self, state: EsState, population_size: int, task_sampler: Optional[TaskSampler] = None):
        if population_size < 2 or population_size % 2:
            raise InputError(f"population_size must be even and >= 2, got {population_size}")
        self.state = state
        self.population_size = population_size
        self.task_sampler = task_sampler
        self._pending: Optional[EsProposal] = None

    @classmethod
    def from_mean(cls, x0, sigma: float, population_size: int, sigma_decay: float = 0.995,
                  learning_rate: float = 0.01, seed: int = 0,
                  task_sampler: Optional[TaskSampler] = None) -> "OpenAIES":
        return cls(EsState(mean=np.array(x0, dtype=np.float64), sigma=sigma, sigma_decay=sigma_decay,
                           learning_rate=learning_rate, seed=seed), population_size, task_sampler)

    def ask(self) -> EsProposal:
        if self._pending is not None:
            raise InputError("a population has already been asked for")
        st = self.state
        rng = generation_rng(st.seed, st.generation)
        half = self.population_size // 2
        noise = rng.standard_normal((half, st.mean.size))
        tasks = [self.task_sampler(rng) if self.task_sampler else None for _ in range(half)]
        pair_seeds = rng.integers(0, SEED_BOUND, size=half)
        candidates = np.empty((self.population_size, st.mean.size))
        candidates[0::2] = st.mean + st.sigma * noise
        candidates[1::2] = st.mean - st.sigma * noise
        self._pending = EsProposal(candidates=candidates, noise=noise,
                                   tasks=[t for t in tasks for _ in (0, 1)],
                                   seeds=[int(s) for s in pair_seeds for _ in (0, 1)])
        return self._pending

    def tell(self, fitness) -> np.ndarray:
        """Consume fitness values in candidate order; returns the gradient estimate."""
        if self._pending is None:
            raise InputError("tell() called before ask()")
        fitness = np.asarray(fitness, dtype=np.float64)
        if fitness.shape != (self.population_size,):
            raise InputError(f"expected {self.population_size} fitness values, got {fitness.shape}")
        st = self.state
        grad = es_gradient(self._pending.noise, fitness[0::2], fitness[1::2], st.sigma)
        self.state = EsState(mean=st.mean + st.learning_rate * grad, sigma=st.sigma * st.sigma_decay,
                             sigma_decay=st.sigma_decay, learning_rate=st.learning_rate,
                             generation=st.generation + 1, seed=st.seed)
        self._pending = None
        return grad


def openai_es_step(state: EsState, fitness: FitnessFn, population_size: int,
                   task_sampler: Optional[TaskSampler] = None) -> EsState:
    """One generation, evaluating candidates sequentially."""
    es = OpenAIES(state, population_size, task_sampler)
    proposal = es.ask()
    values = [fitness(x, task, seed) for x, task, seed in zip(proposal.candidates, proposal.tasks, proposal.seeds)]
    es.tell(values)
    return es.state
