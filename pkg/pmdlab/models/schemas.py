"""
Data models and schemas shared across pmdlab.
"""
from typing import Dict, FrozenSet, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FORMAT_VERSION = "1.0"

Cell = Tuple[int, int]


# ============================================================================
# Grid-World
# ============================================================================

class GridObject(BaseModel):
    """A rewarding object placed on a grid cell."""
    model_config = ConfigDict(frozen=True)

    cell: Cell = Field(..., description="(row, col) position")
    reward: float = Field(..., ge=0.0, le=1.0, description="Reward granted on collection")
    respawn: bool = Field(True, description="False: consumed on collection, never returns")


class GridSpec(BaseModel):
    """A single Grid-World layout."""
    model_config = ConfigDict(frozen=True)

    name: str = Field("grid", description="Human-readable layout name")
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    walls: FrozenSet[Cell] = Field(default_factory=frozenset)
    objects: Tuple[GridObject, ...] = Field(default_factory=tuple)
    start_cells: FrozenSet[Cell] = Field(..., min_length=1)
    gamma: float = Field(0.99, ge=0.0, lt=1.0)
    slip_prob: float = Field(0.0, ge=0.0, lt=1.0)


class GridDistribution(BaseModel):
    """Sampling distribution over Grid-World layouts."""
    width_range: Tuple[int, int] = (3, 7)
    height_range: Tuple[int, int] = (3, 7)
    wall_density_range: Tuple[float, float] = (0.0, 0.2)
    object_count_range: Tuple[int, int] = (1, 3)
    reward_values: Tuple[float, ...] = (0.25, 0.5, 1.0)
    slip_prob: float = Field(0.0, ge=0.0, lt=1.0)
    gamma: float = Field(0.99, ge=0.0, lt=1.0)
    max_states: int = Field(1024, ge=1)
    max_retries: int = Field(100, ge=1)
    seed: int = 0

    @field_validator("width_range", "height_range", "object_count_range")
    @classmethod
    def _int_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 1 or v[1] < v[0]:
            raise ValueError(f"invalid range {v}")
        return v

    @field_validator("wall_density_range")
    @classmethod
    def _density_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not (0.0 <= v[0] <= v[1] < 1.0):
            raise ValueError(f"wall density range must satisfy 0 <= lo <= hi < 1, got {v}")
        return v

    @field_validator("reward_values")
    @classmethod
    def _rewards(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not v or any(r <= 0.0 or r > 1.0 for r in v):
            raise ValueError("reward values must be a nonempty set in (0, 1]")
        return v

    @model_validator(mode="after")
    def _fits_state_budget(self) -> "GridDistribution":
        if self.width_range[1] * self.height_range[1] > self.max_states:
            raise ValueError("largest grid exceeds max_states")
        return self


# ============================================================================
# Policy Mirror Descent
# ============================================================================

class PmdConfig(BaseModel):
    """Hyper-parameters of a tabular PMD (or AMPO) run. Defaults follow the Grid-World setting."""
    eta: float = Field(0.1, gt=0.0, description="Step size")
    num_iterations: int = Field(128, ge=1, description="Number of policy updates T")
    inner_epochs: int = Field(32, ge=0, description="Full-batch gradient steps per update")
    inner_lr: float = Field(40.0, gt=0.0, description="Inner gradient-ascent learning rate")
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    num_envs: int = Field(64, ge=1)
    unroll_length: int = Field(32, ge=1)
    seed: int = 0
    update_mode: Literal["closed_form", "inner_sgd"] = "inner_sgd"
    q_mode: Literal["exact", "gae"] = "gae"
    critic_lr: float = Field(0.5, gt=0.0, le=1.0, description="Step toward the lambda-returns")
    reset_prob: float = Field(0.0, ge=0.0, lt=1.0, description="Per-step probability of resetting to mu")
    eta_schedule: Literal["constant", "linear_increasing"] = "constant"
    prob_floor: float = Field(1e-8, gt=0.0, lt=1e-2, description="Clamp applied before phi_inv")
    keep_policies: bool = False

    @property
    def steps_per_iteration(self) -> int:
        return self.num_envs * self.unroll_length

    @property
    def total_steps(self) -> int:
        return self.num_iterations * self.steps_per_iteration

    def eta_at(self, t: int) -> float:
        if self.eta_schedule == "linear_increasing":
            return self.eta * (t + 1)
        return self.eta


class PmdRunRecord(BaseModel):
    """Per-iteration trajectory of a PMD or AMPO run.

    Index t refers to the policy pi^t before the t-th update; `final_value`
    is the value of pi^T after the last update.
    """
    format_version: str = FORMAT_VERSION
    algorithm: Literal["pmd", "ampo"] = "pmd"
    potential: str
    gamma: float
    eta: float
    steps: List[int] = Field(default_factory=list)
    value: List[float] = Field(default_factory=list)
    q_error: List[float] = Field(default_factory=list)
    update_distance: List[float] = Field(default_factory=list)
    monotone_bound: List[float] = Field(default_factory=list)
    lambdas: Optional[List[List[float]]] = None
    policies: Optional[List[List[List[float]]]] = None
    initial_policy: List[List[float]] = Field(default_factory=list)
    final_policy: List[List[float]] = Field(default_factory=list)
    final_value: float = 0.0
    fallback_used: bool = False

    @model_validator(mode="after")
    def _aligned(self) -> "PmdRunRecord":
        n = len(self.value)
        for name in ("steps", "q_error", "update_distance", "monotone_bound"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        return self

    @property
    def num_iterations(self) -> int:
        return len(self.value)


class TheoremReport(BaseModel):
    """Both sides of the quasi-monotonicity and convergence bounds along a run."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    monotone_lhs: List[float]
    monotone_rhs: List[float]
    monotone_violations: List[int]
    convergence_lhs: List[float]
    convergence_rhs: List[float]
    convergence_violations: List[int]
    d_star_0: float
    error_floor: float
    optimal_value: float
    vacuous: bool = False
    tolerance: float = 1e-8

    @property
    def ok(self) -> bool:
        return not self.monotone_violations and not self.convergence_violations


# ============================================================================
# Evolution
# ============================================================================

class EvolutionConfig(BaseModel):
    """Settings of the meta-optimizer."""
    family: Literal["neural_phi_inv", "piecewise_phi"] = "piecewise_phi"
    strategy: Literal["openai_es", "sep_cma"] = "sep_cma"
    generations: int = Field(600, ge=0)
    population_size: int = Field(128, ge=2)
    sigma_init: float = Field(2.0, gt=0.0)
    sigma_decay: float = Field(0.995, gt=0.0, le=1.0)
    learning_rate: float = Field(0.01, gt=0.0)
    num_knots: int = Field(100, ge=2)
    knot_span: float = Field(1.0, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _population_fits_strategy(self) -> "EvolutionConfig":
        if self.strategy == "openai_es" and self.population_size % 2:
            raise ValueError("OpenAI-ES needs an even population (antithetic pairs)")
        if self.strategy == "sep_cma" and self.population_size < 4:
            raise ValueError("sep-CMA needs a population of at least 4")
        return self

    @classmethod
    def openai_es_defaults(cls, **overrides) -> "EvolutionConfig":
        values = dict(strategy="openai_es", family="neural_phi_inv", generations=512,
                      population_size=512, sigma_init=0.5, sigma_decay=0.995, learning_rate=0.01)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def sep_cma_defaults(cls, **overrides) -> "EvolutionConfig":
        values = dict(strategy="sep_cma", family="piecewise_phi", generations=600,
                      population_size=128, sigma_init=2.0)
        values.update(overrides)
        return cls(**values)


class FitnessSpec(BaseModel):
    """What a candidate mirror map is scored on: mean final value V^T(mu)."""
    distribution: Optional[GridDistribution] = None
    tasks: List[GridSpec] = Field(default_factory=list)
    pmd: PmdConfig = Field(default_factory=PmdConfig)
    algorithm: Literal["pmd", "ampo"] = "pmd"
    eval_episodes: int = Field(1, ge=1, description="Inner runs averaged per fitness call")

    @model_validator(mode="after")
    def _has_tasks(self) -> "FitnessSpec":
        if self.distribution is None and not self.tasks:
            raise ValueError("fitness needs a task distribution or a fixed task list")
        return self


class Checkpoint(BaseModel):
    """Resumable snapshot of an evolution run after one generation."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    format_version: str = FORMAT_VERSION
    generation: int
    family: str
    strategy: str
    state: Dict[str, object]
    best_parameters: List[float]
    best_fitness: float
    fitness_history: List[float]


# ============================================================================
# Harness
# ============================================================================

class ExperimentConfig(BaseModel):
    """Everything one CLI invocation needs."""
    mode: Literal["run-pmd", "run-ampo", "evolve", "compare", "check-bounds"]
    env: Optional[str] = Field(None, description="Held-out grid name or path to a grid text file")
    sample_seed: Optional[int] = Field(None, description="Sample the grid from the default distribution")
    maps: List[str] = Field(default_factory=lambda: ["negentropy", "l2"])
    potential_file: Optional[str] = None
    seeds: int = Field(1, ge=1)
    pmd: PmdConfig = Field(default_factory=PmdConfig)
    evolution: EvolutionConfig = Field(default_factory=EvolutionConfig)
    output_dir: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _env_selected(self) -> "ExperimentConfig":
        if self.mode != "evolve" and self.env is None and self.sample_seed is None:
            raise ValueError(f"mode {self.mode} needs --env or --sample-seed")
        return self


class CurveSummary(BaseModel):
    """Mean and standard error of one metric over seeds, per iteration."""
    mean: List[float]
    stderr: List[float]


class MapSummary(BaseModel):
    """Aggregated results of one mirror map on one environment."""
    map: str
    num_seeds: int = Field(..., ge=1)
    final_value_mean: float
    final_value_stderr: float
    steps: List[int]
    value: CurveSummary
    q_error: CurveSummary
    update_distance: CurveSummary


class ComparisonReport(BaseModel):
    """Side-by-side comparison of mirror maps on one environment."""
    format_version: str = FORMAT_VERSION
    environment: str
    optimal_value: float
    maps: List[MapSummary]


# ============================================================================
# HTTP service
# ============================================================================

class RunRequest(BaseModel):
    """Request body for the run endpoints."""
    env: str = Field(..., description="Held-out grid name")
    potential: str = Field("negentropy", description="Builtin potential name")
    config: PmdConfig = Field(default_factory=lambda: PmdConfig(q_mode="exact", update_mode="closed_form",
                                                                num_iterations=32))


class EnvironmentInfo(BaseModel):
    """A shipped grid layout."""
    name: str
    num_states: int
    num_actions: int
    optimal_value: float
    map_text: str
