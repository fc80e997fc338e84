"""
Meta-learning of mirror maps: a candidate parameter vector is scored by the
value of the last policy of an inner PMD (or AMPO) run that uses it.
"""
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, List, Optional, Sequence, Union

import numpy as np

from pmdlab.errors import ArtifactError, InputError, PmdLabError
from pmdlab.evolution.openai_es import SEED_BOUND, EsState, OpenAIES
from pmdlab.evolution.sep_cma import SepCMAES, SepCmaState
from pmdlab.harness.persistence import load_model, save_model
from pmdlab.mdp.gridworld import compile_grid, sample_task
from pmdlab.mdp.tabular import TabularMdp
from pmdlab.mirror.potentials import (OmegaPotential, near_negentropy_raw, negentropy_init_psi, neural_from_raw,
                                      piecewise_from_raw, raw_from_psi)
from pmdlab.mirror.serialization import dump_potential
from pmdlab.models.schemas import Checkpoint, EvolutionConfig, FitnessSpec, GridSpec
from pmdlab.pmd.ampo import run_ampo
from pmdlab.pmd.runner import run_pmd

logger = logging.getLogger(__name__)

FAILED_FITNESS = float("-inf")
CHECKPOINT_PATTERN = re.compile(r"gen_(\d{4,})\.json$")


# ============================================================================
# Parameterizations
# ============================================================================

def decode_potential(family: str, params: np.ndarray, knot_span: float = 1.0) -> OmegaPotential:
    if family == "piecewise_phi":
        return piecewise_from_raw(params, knot_span)
    if family == "neural_phi_inv":
        return neural_from_raw(params)
    raise InputError(f"unknown mirror-map family {family!r}")


def initial_parameters(config: EvolutionConfig) -> np.ndarray:
    """Entropy-like starting point of either family."""
    if config.family == "piecewise_phi":
        return raw_from_psi(negentropy_init_psi(config.num_knots, config.knot_span))
    return near_negentropy_raw(config.seed)


# ============================================================================
# Fitness
# ============================================================================

@lru_cache(maxsize=256)
def _compiled(spec: GridSpec) -> TabularMdp:
    return compile_grid(spec)


class FitnessEvaluator:
    """Mean final value V^T(mu) of inner runs with a candidate mirror map.

    Picklable, so candidates can be scored in worker processes.
    """

    def __init__(self, spec: FitnessSpec, family: str, knot_span: float = 1.0):
        self.spec = spec
        self.family = family
        self.knot_span = knot_span

    def sample_task(self, rng: np.random.Generator) -> GridSpec:
        if self.spec.tasks:
            return self.spec.tasks[int(rng.integers(len(self.spec.tasks)))]
        return sample_task(self.spec.distribution, int(rng.integers(0, SEED_BOUND)))

    def __call__(self, params: np.ndarray, task: Optional[GridSpec], seed: int) -> float:
        rng = np.random.Generator(np.random.Philox(seed))
        task = task if task is not None else self.sample_task(rng)
        try:
            pot = decode_potential(self.family, np.asarray(params), self.knot_span)
            mdp = _compiled(task)
            runner = run_ampo if self.spec.algorithm == "ampo" else run_pmd
            values = []
            for episode in range(self.spec.eval_episodes):
                config = self.spec.pmd.model_copy(update={"seed": int(rng.integers(0, SEED_BOUND))})
                values.append(runner(mdp, pot, config).final_value)
        except (PmdLabError, ValueError, FloatingPointError) as e:
            logger.warning("Inner run failed for a candidate on %s: %s", task.name, e)
            return FAILED_FITNESS
        return float(np.mean(values))


def evaluate_all(evaluator: FitnessEvaluator, candidates: np.ndarray, tasks: Sequence[Any], seeds: Sequence[int],
                 workers: int = 1) -> np.ndarray:
    """Score candidates, in candidate order regardless of completion order."""
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(evaluator, list(candidates), list(tasks), list(seeds))))
    return np.array([evaluator(x, t, s) for x, t, s in zip(candidates, tasks, seeds)])


def evaluation_seeds(seed: int, count: int) -> List[int]:
    """Fixed seeds on which the mean parameters are scored every generation."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5EED])))
    return [int(s) for s in rng.integers(0, SEED_BOUND, size=count)]


# ============================================================================
# Meta loop
# ============================================================================

@dataclass
class EvolutionResult:
    family: str
    strategy: str
    best_parameters: np.ndarray
    best_fitness: float
    fitness_history: List[float] = field(default_factory=list)
    knot_span: float = 1.0

    @property
    def potential(self) -> OmegaPotential:
        return decode_potential(self.family, self.best_parameters, self.knot_span)


def _make_strategy(config: EvolutionConfig, x0: np.ndarray, evaluator: FitnessEvaluator, state=None):
    if config.strategy == "openai_es":
        state = state or EsState(mean=x0, sigma=config.sigma_init, sigma_decay=config.sigma_decay,
                                 learning_rate=config.learning_rate, seed=config.seed)
        return OpenAIES(state, config.population_size, task_sampler=evaluator.sample_task)
    state = state or SepCmaState.initial(x0, config.sigma_init, seed=config.seed,
                                         population_size=config.population_size)
    return SepCMAES(state, config.population_size)


def _state_from_dict(strategy: str, data: dict):
    return EsState.from_dict(data) if strategy == "openai_es" else SepCmaState.from_dict(data)


def latest_checkpoint(directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    if directory.is_file():
        return directory
    found = sorted((int(m.group(1)), p) for p in directory.glob("gen_*.json")
                   if (m := CHECKPOINT_PATTERN.search(p.name)))
    if not found:
        raise ArtifactError(f"no checkpoints in {directory}")
    return found[-1][1]


def write_checkpoint(directory: Path, checkpoint: Checkpoint, best: OmegaPotential) -> Path:
    path = save_model(checkpoint, directory / f"gen_{checkpoint.generation:04d}.json")
    dump_potential(best, directory / f"best_{checkpoint.generation:04d}.pot")
    return path


def evolve_mirror_map(fitness_spec: FitnessSpec, config: EvolutionConfig,
                      checkpoint_dir: Optional[Union[str, Path]] = None,
                      resume_from: Optional[Union[str, Path]] = None,
                      workers: int = 1) -> EvolutionResult:
    """Search the chosen family for the mirror map maximizing mean V^T(mu).

    Every generation the strategy's mean is scored on a fixed set of
    evaluation seeds; the best-scoring mean so far (generation 0 is the
    entropy-like initialization) is what gets returned, so the result never
    scores below the initialization on that set.

    Args:
        fitness_spec: tasks, inner PMD settings and episodes per fitness call.
        config: family, strategy and strategy hyper-parameters.
        checkpoint_dir: where gen_NNNN.json and best_NNNN.pot are written.
        resume_from: a checkpoint file or directory to continue from.
        workers: processes used to score each generation.

    Returns:
        EvolutionResult with the best mean parameters and the per-generation
        fitness of the mean.
    """
    evaluator = FitnessEvaluator(fitness_spec, config.family, config.knot_span)
    eval_seeds = evaluation_seeds(config.seed, fitness_spec.eval_episodes)
    score_mean = lambda params: float(np.mean([evaluator(params, None, s) for s in eval_seeds]))
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    if resume_from is not None:
        checkpoint = load_model(latest_checkpoint(resume_from), Checkpoint)
        if checkpoint.family != config.family or checkpoint.strategy != config.strategy:
            raise InputError(f"checkpoint is {checkpoint.family}/{checkpoint.strategy}, "
                             f"config asks for {config.family}/{config.strategy}")
        state = _state_from_dict(config.strategy, checkpoint.state)
        strategy = _make_strategy(config, state.mean, evaluator, state)
        best_params = np.asarray(checkpoint.best_parameters)
        best_fitness = checkpoint.best_fitness
        history = list(checkpoint.fitness_history)
        logger.info("Resuming %s/%s at generation %d", config.family, config.strategy, checkpoint.generation)
    else:
        x0 = initial_parameters(config)
        strategy = _make_strategy(config, x0, evaluator)
        best_params = x0.copy()
        best_fitness = score_mean(x0)
        history = [best_fitness]
        if ckpt_dir is not None:
            write_checkpoint(ckpt_dir, Checkpoint(generation=0, family=config.family, strategy=config.strategy,
                                                  state=strategy.state.to_dict(), best_parameters=x0.tolist(),
                                                  best_fitness=best_fitness, fitness_history=history),
                             decode_potential(config.family, x0, config.knot_span))
        logger.info("Generation 0: initial fitness %.6f", best_fitness)

    while strategy.state.generation < config.generations:
        proposal = strategy.ask()
        tasks = getattr(proposal, "tasks", [None] * len(proposal.seeds))
        fitness = evaluate_all(evaluator, proposal.candidates, tasks, proposal.seeds, workers)
        if np.all(np.isneginf(fitness)):
            logger.warning("Every candidate failed in generation %d", strategy.state.generation + 1)
        strategy.tell(fitness)

        generation = strategy.state.generation
        mean_fitness = score_mean(strategy.state.mean)
        history.append(mean_fitness)
        if mean_fitness > best_fitness:
            best_fitness, best_params = mean_fitness, strategy.state.mean.copy()
        logger.info("Generation %d: mean %.6f, population best %.6f, best so far %.6f", generation,
                    mean_fitness, float(np.max(fitness)), best_fitness)
        if ckpt_dir is not None:
            write_checkpoint(ckpt_dir, Checkpoint(generation=generation, family=config.family,
                                                  strategy=config.strategy, state=strategy.state.to_dict(),
                                                  best_parameters=best_params.tolist(), best_fitness=best_fitness,
                                                  fitness_history=history),
                             decode_potential(config.family, best_params, config.knot_span))

    return EvolutionResult(family=config.family, strategy=config.strategy, best_parameters=best_params,
                           best_fitness=best_fitness, fitness_history=history, knot_span=config.knot_span)
