"""
Command-line entry point: run-pmd, run-ampo, evolve, compare, check-bounds.

Exit codes: 0 on success, 1 on runtime failures (and on bound violations
for check-bounds), 2 on usage or configuration errors.
"""
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from pmdlab.config import configure_logging, settings
from pmdlab.errors import InputError, PmdLabError
from pmdlab.harness import experiments
from pmdlab.models.schemas import EvolutionConfig, ExperimentConfig

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

FAMILY_ALIASES = {"piecewise": "piecewise_phi", "piecewise_phi": "piecewise_phi",
                  "neural": "neural_phi_inv", "neural_phi_inv": "neural_phi_inv"}
STRATEGY_ALIASES = {"sep-cma": "sep_cma", "sep_cma": "sep_cma", "openai-es": "openai_es", "openai_es": "openai_es"}

# flag dest -> PmdConfig field
PMD_FLAGS = {
    "eta": "eta", "iterations": "num_iterations", "inner_epochs": "inner_epochs", "inner_lr": "inner_lr",
    "gae_lambda": "gae_lambda", "num_envs": "num_envs", "unroll_length": "unroll_length",
    "update_mode": "update_mode", "q_mode": "q_mode", "reset_prob": "reset_prob", "critic_lr": "critic_lr",
    "pmd_seed": "seed",
}
EVOLUTION_FLAGS = {
    "generations": "generations", "population": "population_size", "sigma": "sigma_init",
    "sigma_decay": "sigma_decay", "learning_rate": "learning_rate", "knots": "num_knots",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Sectioned key-value config file; flags override it")
    parser.add_argument("--env", help="Held-out grid name or path to a map file")
    parser.add_argument("--sample-seed", type=int, help="Sample the grid from the default distribution")
    parser.add_argument("--map", "--maps", dest="maps", help="Comma-separated mirror maps or potential files")
    parser.add_argument("--potential-file", help="Learned potential to add to the selection")
    parser.add_argument("--output-dir", help=f"Output directory (default: {settings.output_dir}/<mode>)")
    parser.add_argument("--seed", type=int)

    pmd = parser.add_argument_group("PMD")
    pmd.add_argument("--eta", type=float)
    pmd.add_argument("--iterations", type=int)
    pmd.add_argument("--inner-epochs", type=int)
    pmd.add_argument("--inner-lr", type=float)
    pmd.add_argument("--gae-lambda", type=float)
    pmd.add_argument("--num-envs", type=int)
    pmd.add_argument("--unroll-length", type=int)
    pmd.add_argument("--reset-prob", type=float)
    pmd.add_argument("--critic-lr", type=float)
    pmd.add_argument("--pmd-seed", type=int)
    pmd.add_argument("--update-mode", choices=["closed_form", "inner_sgd"])
    pmd.add_argument("--q-mode", choices=["exact", "gae"])
    pmd.add_argument("--exact-q", action="store_true", help="Shorthand for --q-mode exact")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmdlab", description="Tabular policy mirror descent with learned mirror maps")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode, help_text in (("run-pmd", "Run policy mirror descent once"),
                            ("run-ampo", "Run tabular AMPO once"),
                            ("compare", "Compare mirror maps over several seeds"),
                            ("check-bounds", "Check the improvement and convergence bounds along a run")):
        p = sub.add_parser(mode, help=help_text)
        _common(p)
        if mode == "compare":
            p.add_argument("--seeds", type=int)

    evolve = sub.add_parser("evolve", help="Meta-learn a mirror map")
    _common(evolve)
    evolve.add_argument("--family", choices=sorted(FAMILY_ALIASES))
    evolve.add_argument("--strategy", choices=sorted(STRATEGY_ALIASES))
    evolve.add_argument("--generations", type=int)
    evolve.add_argument("--population", type=int)
    evolve.add_argument("--sigma", type=float)
    evolve.add_argument("--sigma-decay", type=float)
    evolve.add_argument("--learning-rate", type=float)
    evolve.add_argument("--knots", type=int)
    evolve.add_argument("--grid-size", type=int, help="Sample square grids of this size")
    evolve.add_argument("--resume", action="store_true", help="Continue from the latest checkpoint")
    evolve.add_argument("--workers", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    values = vars(args)
    overrides: Dict[str, Any] = {}
    for key in ("env", "sample_seed", "potential_file", "output_dir", "seed", "seeds"):
        if values.get(key) is not None:
            overrides[key] = values[key]
    if values.get("maps"):
        overrides["maps"] = [m.strip() for m in values["maps"].split(",") if m.strip()]

    pmd = {field: values[flag] for flag, field in PMD_FLAGS.items() if values.get(flag) is not None}
    if values.get("exact_q"):
        pmd["q_mode"] = "exact"
    overrides["pmd"] = pmd

    evolution = {field: values[flag] for flag, field in EVOLUTION_FLAGS.items() if values.get(flag) is not None}
    if values.get("family"):
        evolution["family"] = FAMILY_ALIASES[values["family"]]
    if values.get("strategy"):
        evolution["strategy"] = STRATEGY_ALIASES[values["strategy"]]
    if values.get("seed") is not None:
        evolution.setdefault("seed", values["seed"])
    overrides["evolution"] = evolution
    return overrides


def _config_from_args(args: argparse.Namespace):
    file_values = experiments.load_experiment_file(args.config) if args.config else None
    overrides = _overrides(args)
    if args.mode == "check-bounds":
        from_file = (file_values or {}).get("pmd", {})
        if "update_mode" not in overrides["pmd"] and "update_mode" not in from_file:
            # The per-step bound is stated for exact per-state maximizers.
            overrides["pmd"]["update_mode"] = "closed_form"
    if args.mode == "evolve" and "strategy" in overrides["evolution"]:
        # Fill in the strategy's own defaults for anything not given.
        evo = overrides["evolution"]
        base = (EvolutionConfig.openai_es_defaults() if evo["strategy"] == "openai_es"
                else EvolutionConfig.sep_cma_defaults())
        file_evo = (file_values or {}).get("evolution", {})
        overrides["evolution"] = {**{k: v for k, v in base.model_dump().items() if k not in file_evo}, **evo}
    return experiments.build_experiment_config(args.mode, file_values, overrides)


def _dispatch(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if config.mode in ("run-pmd", "run-ampo"):
        record, out = experiments.run_single(config)
        print(f"{config.mode}: V^T(mu) = {record.final_value:.6f} -> {out}")
        return EXIT_OK
    if config.mode == "compare":
        report, out = experiments.compare(config)
        for summary in report.maps:
            print(f"{summary.map}: {summary.final_value_mean:.6f} +/- {summary.final_value_stderr:.6f}")
        print(f"optimal: {report.optimal_value:.6f} -> {out}")
        return EXIT_OK
    if config.mode == "check-bounds":
        report, out = experiments.check_bounds(config)
        print(f"monotone violations: {len(report.monotone_violations)}, "
              f"convergence violations: {len(report.convergence_violations)}"
              f"{' (convergence bound vacuous)' if report.vacuous else ''} -> {out}")
        return EXIT_OK if report.ok else EXIT_FAILURE
    result, out = experiments.evolve(config, grid_size=args.grid_size, resume=args.resume, workers=args.workers)
    print(f"evolve: best fitness {result.best_fitness:.6f} after {len(result.fitness_history) - 1} "
          f"generations -> {out}")
    return EXIT_OK


def _configuration_error(mode: str, message: str) -> int:
    print(f"pmdlab {mode}: configuration error: {message}", file=sys.stderr)
    return EXIT_USAGE


def cli_main(argv: Optional[List[str]] = None) -> int:
    configure_logging(settings.log_level)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        config = _config_from_args(args)
    except ValidationError as e:
        return _configuration_error(args.mode, e.errors()[0]["msg"])
    except (InputError, KeyError) as e:
        return _configuration_error(args.mode, str(e))

    try:
        return _dispatch(args, config)
    except (InputError, KeyError) as e:
        return _configuration_error(args.mode, str(e))
    except (PmdLabError, ValidationError, OSError) as e:
        # ValidationError here comes from data produced mid-run, not from the command line
        logger.error("%s failed: %s", args.mode, e)
        print(f"pmdlab {args.mode}: {e}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
