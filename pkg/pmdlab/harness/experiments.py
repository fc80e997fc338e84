"""
Experiment drivers behind the CLI and the HTTP service.
"""
import configparser
import logging
import textwrap
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pmdlab.config import settings
from pmdlab.errors import InputError
from pmdlab.evolution.meta import EvolutionResult, evolve_mirror_map
from pmdlab.harness.figures import FIGURE_KINDS, emit_figure, summarize
from pmdlab.harness.persistence import save_model, write_csv, write_record_csv
from pmdlab.mdp.gridworld import compile_grid, resolve_environment
from pmdlab.mdp.tabular import TabularMdp, optimal_policy_oracle, value_of
from pmdlab.mirror.potentials import BUILTIN_POTENTIALS, OmegaPotential, potential_from_name
from pmdlab.mirror.serialization import dump_potential, load_potential
from pmdlab.models.schemas import (ComparisonReport, CurveSummary, ExperimentConfig, FitnessSpec, GridDistribution,
                                   GridSpec, MapSummary, PmdRunRecord, TheoremReport)
from pmdlab.pmd.ampo import run_ampo
from pmdlab.pmd.diagnostics import theorem1_check
from pmdlab.pmd.runner import run_pmd

logger = logging.getLogger(__name__)

SECTIONS = ("experiment", "pmd", "evolution")
LIST_KEYS = {"maps"}
CURVE_COLUMNS = ("map", "seed", "iteration", "steps", "value", "q_error", "update_distance")


# ============================================================================
# Configuration files
# ============================================================================

def parse_config_text(text: str) -> Dict[str, Dict[str, str]]:
    """Sectioned `key = value` text into {section: {key: raw value}}.

    Keys before the first section header belong to [experiment]; dashes in
    keys become underscores.
    """
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       interpolation=None, strict=False)
    parser.optionxform = str
    try:
        parser.read_string(f"[experiment]\n{textwrap.dedent(text)}", source="<config>")
    except configparser.Error as e:
        raise InputError(f"malformed config: {e}") from e

    sections: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    for name in parser.sections():
        if name not in sections:
            raise InputError(f"unknown section [{name}]")
        sections[name] = {key.replace("-", "_"): value for key, value in parser.items(name)}
    return sections


def load_experiment_file(path: Union[str, Path]) -> Dict[str, Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def build_experiment_config(mode: str, file_values: Optional[Dict[str, Dict[str, str]]] = None,
                            overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Merge defaults, config-file values and flags; flags win over the file."""
    file_values = file_values or {name: {} for name in SECTIONS}
    overrides = overrides or {}
    merged: Dict[str, Any] = {key: value for key, value in file_values.get("experiment", {}).items()}
    for key in LIST_KEYS:
        if isinstance(merged.get(key), str):
            merged[key] = [item.strip() for item in merged[key].split(",") if item.strip()]
    for section in ("pmd", "evolution"):
        merged[section] = dict(file_values.get(section, {}))
        merged[section].update(overrides.get(section, {}))
    merged.update({k: v for k, v in overrides.items() if k not in ("pmd", "evolution")})
    merged["mode"] = mode
    return ExperimentConfig.model_validate(merged)


# ============================================================================
# Resolution helpers
# ============================================================================

def resolve_potential(spec: str, num_knots: int = 100, knot_span: float = 1.0) -> Tuple[str, OmegaPotential]:
    """Builtin name or path to a potential file -> (label, potential)."""
    key = spec.strip().lower().replace("-", "_")
    if key in BUILTIN_POTENTIALS or key in ("neg_entropy", "entropy", "euclidean", "augmented"):
        return key, potential_from_name(key, num_knots, knot_span)
    path = Path(spec)
    if path.exists():
        return path.stem, load_potential(path)
    raise InputError(f"unknown mirror map {spec!r}: not a builtin ({', '.join(BUILTIN_POTENTIALS)}) or a file")


def resolve_mdp(config: ExperimentConfig) -> Tuple[GridSpec, TabularMdp]:
    spec = resolve_environment(config.env, config.sample_seed)
    return spec, compile_grid(spec)


def output_dir_for(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) if config.output_dir else settings.output_dir / config.mode


def map_specs(config: ExperimentConfig) -> List[str]:
    maps = list(config.maps)
    if config.potential_file and config.potential_file not in maps:
        maps.append(config.potential_file)
    if not maps:
        raise InputError("no mirror maps selected")
    return maps


# ============================================================================
# Modes
# ============================================================================

def run_single(config: ExperimentConfig) -> Tuple[PmdRunRecord, Path]:
    """run-pmd / run-ampo with the first selected map; writes record.json and record.csv."""
    _, mdp = resolve_mdp(config)
    label, pot = resolve_potential(map_specs(config)[0])
    runner = run_ampo if config.mode == "run-ampo" else run_pmd
    record = runner(mdp, pot, config.pmd)
    out = output_dir_for(config)
    save_model(record, out / "record.json")
    write_record_csv(record, out / "record.csv")
    logger.info("%s with %s: V^T(mu) = %.6f (outputs in %s)", config.mode, label, record.final_value, out)
    return record, out


def compare(config: ExperimentConfig) -> Tuple[ComparisonReport, Path]:
    """Run every selected map over `seeds` seeds and write report, curves and figures."""
    spec, mdp = resolve_mdp(config)
    _, v_star = optimal_policy_oracle(mdp)
    out = output_dir_for(config)
    rows = []
    summaries = []
    for map_spec in map_specs(config):
        label, pot = resolve_potential(map_spec)
        records = []
        for s in range(config.seeds):
            pmd = config.pmd.model_copy(update={"seed": config.pmd.seed + s})
            record = run_pmd(mdp, pot, pmd)
            records.append(record)
            save_model(record, out / "records" / f"{label}_seed{s}.json")
            for t in range(record.num_iterations):
                rows.append([label, s, t, record.steps[t], repr(record.value[t]), repr(record.q_error[t]),
                             repr(record.update_distance[t])])
        curves = {}
        for metric in FIGURE_KINDS:
            mean, stderr = summarize([getattr(r, metric) for r in records])
            curves[metric] = CurveSummary(mean=mean, stderr=stderr)
        final_mean, final_stderr = summarize([[r.final_value] for r in records])
        summaries.append(MapSummary(map=label, num_seeds=len(records), final_value_mean=final_mean[0],
                                    final_value_stderr=final_stderr[0], steps=records[0].steps, **curves))
        logger.info("%s on %s: final value %.6f +/- %.6f", label, spec.name, final_mean[0], final_stderr[0])

    report = ComparisonReport(environment=spec.name, optimal_value=value_of(v_star, mdp.start_dist), maps=summaries)
    save_model(report, out / "report.json")
    write_csv(out / "curves.csv", CURVE_COLUMNS, rows)
    for kind in FIGURE_KINDS:
        (out / f"{kind}.svg").write_text(emit_figure(report, kind), encoding="utf-8")
    return report, out


def check_bounds(config: ExperimentConfig) -> Tuple[TheoremReport, Path]:
    """Run once and evaluate both bounds along the run; writes bounds.json."""
    _, mdp = resolve_mdp(config)
    label, pot = resolve_potential(map_specs(config)[0])
    record = run_pmd(mdp, pot, config.pmd)
    report = theorem1_check(record, mdp, pot)
    out = output_dir_for(config)
    save_model(record, out / "record.json")
    write_record_csv(record, out / "record.csv")
    save_model(report, out / "bounds.json")
    if report.vacuous:
        logger.info("Convergence bound for %s is vacuous (infinite initial divergence)", label)
    return report, out


def fitness_spec_for(config: ExperimentConfig, grid_size: Optional[int] = None) -> FitnessSpec:
    """Fixed task when an environment is selected, otherwise the sampling distribution."""
    if config.env is not None or config.sample_seed is not None:
        spec, _ = resolve_mdp(config)
        return FitnessSpec(tasks=[spec], pmd=config.pmd)
    dist = GridDistribution(seed=config.seed)
    if grid_size is not None:
        dist = GridDistribution(width_range=(grid_size, grid_size), height_range=(grid_size, grid_size),
                                seed=config.seed)
    return FitnessSpec(distribution=dist, pmd=config.pmd)


def evolve(config: ExperimentConfig, grid_size: Optional[int] = None, resume: bool = False,
           workers: Optional[int] = None) -> Tuple[EvolutionResult, Path]:
    out = output_dir_for(config)
    checkpoints = out / "checkpoints"
    result = evolve_mirror_map(fitness_spec_for(config, grid_size), config.evolution, checkpoint_dir=checkpoints,
                               resume_from=checkpoints if resume else None,
                               workers=workers or settings.workers)
    dump_potential(result.potential, out / "best.pot")
    write_csv(out / "fitness.csv", ("generation", "mean_fitness"),
              [[g, repr(f)] for g, f in enumerate(result.fitness_history)])
    return result, out
