"""
Tests for data models and schemas.
"""
import pytest
from pydantic import ValidationError

from pmdlab.models.schemas import (EvolutionConfig, ExperimentConfig, FitnessSpec, GridDistribution, GridObject,
                                   GridSpec, PmdConfig, PmdRunRecord, RunRequest)


# ============================================================================
# Grid Models Tests
# ============================================================================

def test_grid_spec_is_hashable():
    spec = GridSpec(width=2, height=2, objects=(GridObject(cell=(1, 1), reward=0.5),), start_cells=frozenset([(0, 0)]))
    assert hash(spec) == hash(spec.model_copy())


def test_grid_spec_validation():
    with pytest.raises(ValidationError):
        GridSpec(width=0, height=2, start_cells=frozenset([(0, 0)]))
    with pytest.raises(ValidationError):
        GridSpec(width=2, height=2, start_cells=frozenset())
    with pytest.raises(ValidationError):
        GridSpec(width=2, height=2, start_cells=frozenset([(0, 0)]), gamma=1.0)
    with pytest.raises(ValidationError):
        GridObject(cell=(0, 0), reward=1.5)


def test_grid_distribution_validation():
    GridDistribution()
    with pytest.raises(ValidationError):
        GridDistribution(width_range=(5, 3))
    with pytest.raises(ValidationError):
        GridDistribution(wall_density_range=(0.5, 1.0))
    with pytest.raises(ValidationError):
        GridDistribution(reward_values=(0.0, 1.0))
    with pytest.raises(ValidationError):
        GridDistribution(width_range=(40, 40), height_range=(40, 40))


# ============================================================================
# PMD Models Tests
# ============================================================================

def test_pmd_config_defaults():
    config = PmdConfig()
    assert (config.num_iterations, config.inner_epochs, config.inner_lr) == (128, 32, 40.0)
    assert config.steps_per_iteration == 64 * 32
    assert config.total_steps == 128 * 64 * 32


def test_eta_schedule():
    assert PmdConfig(eta=0.5).eta_at(9) == 0.5
    assert PmdConfig(eta=0.5, eta_schedule="linear_increasing").eta_at(9) == pytest.approx(5.0)


def test_pmd_config_validation():
    with pytest.raises(ValidationError):
        PmdConfig(eta=0.0)
    with pytest.raises(ValidationError):
        PmdConfig(update_mode="mirror_prox")
    with pytest.raises(ValidationError):
        PmdConfig(gae_lambda=1.5)


def test_run_record_series_must_align():
    PmdRunRecord(potential="l2", gamma=0.9, eta=0.1, steps=[0], value=[1.0], q_error=[0.0],
                 update_distance=[0.1], monotone_bound=[0.0])
    with pytest.raises(ValidationError):
        PmdRunRecord(potential="l2", gamma=0.9, eta=0.1, steps=[0, 1], value=[1.0], q_error=[0.0],
                     update_distance=[0.1], monotone_bound=[0.0])


# ============================================================================
# Evolution Models Tests
# ============================================================================

def test_evolution_population_fits_strategy():
    with pytest.raises(ValidationError):
        EvolutionConfig(strategy="openai_es", population_size=7)
    with pytest.raises(ValidationError):
        EvolutionConfig(strategy="sep_cma", population_size=2)
    EvolutionConfig(strategy="openai_es", population_size=2)


def test_strategy_defaults():
    es = EvolutionConfig.openai_es_defaults()
    assert (es.family, es.population_size, es.generations) == ("neural_phi_inv", 512, 512)
    cma = EvolutionConfig.sep_cma_defaults(generations=3)
    assert (cma.family, cma.population_size, cma.generations, cma.sigma_init) == ("piecewise_phi", 128, 3, 2.0)


def test_fitness_spec_needs_tasks():
    with pytest.raises(ValidationError):
        FitnessSpec()
    assert FitnessSpec(distribution=GridDistribution()).tasks == []


# ============================================================================
# Harness Models Tests
# ============================================================================

def test_experiment_config_needs_environment():
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="run-pmd")
    assert ExperimentConfig(mode="run-pmd", sample_seed=3).env is None
    # evolve falls back to the sampling distribution
    assert ExperimentConfig(mode="evolve").maps == ["negentropy", "l2"]


def test_run_request_defaults():
    request = RunRequest(env="maze")
    assert request.potential == "negentropy"
    assert request.config.q_mode == "exact"
    assert request.config.num_iterations == 32
