"""
Tests for the experiment harness: config files, artifacts, figures and the CLI.
"""
import json
import logging

import numpy as np
import pytest

from pmdlab.errors import ArtifactError, InputError
from pmdlab.harness.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, cli_main
from pmdlab.harness.experiments import build_experiment_config, parse_config_text, resolve_potential
from pmdlab.harness.figures import emit_figure, summarize
from pmdlab.harness.persistence import RECORD_CSV_COLUMNS, load_model, load_record, save_model, write_record_csv
from pmdlab.mdp.gridworld import compile_grid
from pmdlab.mirror.potentials import L2Potential, PiecewisePotential, negentropy_init_psi
from pmdlab.mirror.serialization import format_potential
from pmdlab.models.schemas import ComparisonReport, PmdRunRecord, TheoremReport
from pmdlab.pmd.runner import run_pmd

pytestmark = pytest.mark.integration

FAST_EXACT = ["--env", "open_room", "--exact-q", "--update-mode", "closed_form", "--iterations", "3"]


@pytest.fixture
def record(tiny_grid, exact_config):
    return run_pmd(compile_grid(tiny_grid), L2Potential(), exact_config)


# ============================================================================
# Configuration
# ============================================================================

def test_parse_config_text_sections():
    text = """
    # top-level keys belong to [experiment]
    env = maze
    maps = negentropy, l2
    [pmd]
    eta = 0.5
    num-iterations = 7
    [evolution]
    knots = 12
    """
    sections = parse_config_text(text)
    assert sections["experiment"] == {"env": "maze", "maps": "negentropy, l2"}
    assert sections["pmd"] == {"eta": "0.5", "num_iterations": "7"}
    assert sections["evolution"] == {"knots": "12"}


def test_parse_config_text_inline_comments_and_repeated_sections():
    sections = parse_config_text("env = maze  # held-out layout\n[pmd]\neta = 0.5\n[experiment]\nmaps = l2\n"
                                 "[pmd]\ninner-lr = 3\n")
    assert sections["experiment"] == {"env": "maze", "maps": "l2"}
    assert sections["pmd"] == {"eta": "0.5", "inner_lr": "3"}


@pytest.mark.parametrize("text", ["[trainer]\nlr = 1\n", "[pmd]\neta 0.5\n"])
def test_parse_config_text_rejects_malformed(text):
    with pytest.raises(InputError):
        parse_config_text(text)


def test_flags_override_config_file():
    file_values = parse_config_text("env = maze\nmaps = l2\n[pmd]\neta = 0.5\nnum_iterations = 7\n")
    config = build_experiment_config("run-pmd", file_values, {"env": "corridor", "pmd": {"eta": 0.2}})
    assert config.env == "corridor"
    assert config.maps == ["l2"]
    assert config.pmd.eta == 0.2
    assert config.pmd.num_iterations == 7


def test_resolve_potential_builtin_and_file(tmp_path):
    assert resolve_potential("L2")[0] == "l2"
    path = tmp_path / "learned.pot"
    path.write_text(format_potential(PiecewisePotential(negentropy_init_psi(6))))
    label, pot = resolve_potential(str(path))
    assert label == "learned" and isinstance(pot, PiecewisePotential)
    with pytest.raises(InputError):
        resolve_potential("tsallis")


# ============================================================================
# Artifacts
# ============================================================================

def test_record_json_round_trip(record, tmp_path):
    path = save_model(record, tmp_path / "record.json")
    assert load_record(path) == record


def test_record_csv_header_and_rows(record, tmp_path):
    lines = write_record_csv(record, tmp_path / "record.csv").read_text().splitlines()
    assert lines[0] == ",".join(RECORD_CSV_COLUMNS)
    assert len(lines) == record.num_iterations + 1
    first = lines[1].split(",")
    assert float(first[2]) == record.value[0]


def test_truncated_json_reports_offset(record, tmp_path):
    text = record.model_dump_json(indent=2)
    path = tmp_path / "cut.json"
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ArtifactError) as excinfo:
        load_model(path, PmdRunRecord)
    assert excinfo.value.byte_offset is not None


def test_other_major_version_is_refused(record, tmp_path):
    data = json.loads(record.model_dump_json())
    data["format_version"] = "2.0"
    path = tmp_path / "future.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ArtifactError):
        load_record(path)


def test_missing_artifact(tmp_path):
    with pytest.raises(ArtifactError):
        load_record(tmp_path / "absent.json")


def test_theorem_report_keeps_infinity(tmp_path):
    report = TheoremReport(monotone_lhs=[0.0], monotone_rhs=[0.0], monotone_violations=[],
                           convergence_lhs=[1.0], convergence_rhs=[float("inf")], convergence_violations=[],
                           d_star_0=float("inf"), error_floor=0.0, optimal_value=1.0, vacuous=True)
    loaded = load_model(save_model(report, tmp_path / "bounds.json"), TheoremReport)
    assert np.isinf(loaded.d_star_0) and loaded.vacuous


# ============================================================================
# Figures
# ============================================================================

def test_summarize_mean_and_standard_error():
    mean, stderr = summarize([[1.0, 2.0], [3.0, 4.0]])
    assert mean == [2.0, 3.0]
    assert stderr == pytest.approx([1.0, 1.0])
    assert summarize([[5.0, 6.0]])[1] == [0.0, 0.0]
    with pytest.raises(InputError):
        summarize([])


def test_emit_figure_rejects_bad_input():
    empty = ComparisonReport(environment="x", optimal_value=1.0, maps=[])
    with pytest.raises(InputError):
        emit_figure(empty, "value")
    with pytest.raises(InputError):
        emit_figure(empty, "regret")


# ============================================================================
# CLI
# ============================================================================

def test_cli_run_pmd_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli_main(["run-pmd", *FAST_EXACT, "--output-dir", str(out)]) == EXIT_OK
    assert (out / "record.json").exists() and (out / "record.csv").exists()
    assert load_record(out / "record.json").num_iterations == 3
    assert "V^T(mu)" in capsys.readouterr().out


def test_cli_run_ampo(tmp_path):
    out = tmp_path / "ampo"
    assert cli_main(["run-ampo", *FAST_EXACT, "--map", "l2", "--output-dir", str(out)]) == EXIT_OK
    assert load_record(out / "record.json").algorithm == "ampo"


def test_cli_compare_draws_band_with_several_seeds(tmp_path):
    out = tmp_path / "cmp"
    args = ["compare", "--env", "open_room", "--update-mode", "closed_form", "--iterations", "3",
            "--num-envs", "4", "--unroll-length", "8", "--seeds", "2", "--output-dir", str(out)]
    assert cli_main(args) == EXIT_OK
    report = load_model(out / "report.json", ComparisonReport)
    assert [m.map for m in report.maps] == ["negentropy", "l2"]
    assert all(m.num_seeds == 2 for m in report.maps)
    svg = (out / "value.svg").read_text()
    assert 'class="band"' in svg
    assert (out / "curves.csv").read_text().startswith("map,seed,iteration")


def test_cli_compare_single_seed_has_no_band(tmp_path):
    out = tmp_path / "cmp1"
    assert cli_main(["compare", *FAST_EXACT, "--map", "l2", "--output-dir", str(out)]) == EXIT_OK
    svg = (out / "q_error.svg").read_text()
    assert 'class="band"' not in svg
    assert "no band" in svg


def test_cli_check_bounds(tmp_path):
    out = tmp_path / "bounds"
    assert cli_main(["check-bounds", "--env", "open_room", "--exact-q", "--iterations", "5",
                     "--output-dir", str(out)]) == EXIT_OK
    report = load_model(out / "bounds.json", TheoremReport)
    assert report.ok


def test_cli_evolve_writes_best_potential(tmp_path):
    out = tmp_path / "evo"
    args = ["evolve", *FAST_EXACT, "--strategy", "sep-cma", "--family", "piecewise", "--generations", "1",
            "--population", "4", "--knots", "8", "--output-dir", str(out)]
    assert cli_main(args) == EXIT_OK
    assert (out / "best.pot").exists()
    assert (out / "checkpoints" / "gen_0001.json").exists()
    assert len((out / "fitness.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("argv", [
    ["run-pmd", "--env", "atlantis"],
    ["run-pmd", "--exact-q"],
    ["run-pmd", "--env", "open_room", "--frobnicate"],
    ["run-pmd", "--env", "open_room", "--eta", "-1"],
    ["teleport"],
])
def test_cli_usage_errors(argv, capsys):
    assert cli_main(argv) == EXIT_USAGE
    assert capsys.readouterr().err


def test_cli_corrupt_potential_file_is_a_runtime_failure(tmp_path):
    text = format_potential(PiecewisePotential(negentropy_init_psi(40)))
    path = tmp_path / "cut.pot"
    path.write_text(text[: len(text) - 100])
    assert cli_main(["run-pmd", *FAST_EXACT, "--map", str(path), "--output-dir", str(tmp_path / "o")]) == EXIT_FAILURE


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("env = open_room\nmaps = l2\n[pmd]\nq_mode = exact\nupdate_mode = closed_form\n"
                   "num_iterations = 9\n")
    out = tmp_path / "cfg"
    assert cli_main(["run-pmd", "--config", str(cfg), "--iterations", "2", "--output-dir", str(out)]) == EXIT_OK
    assert load_record(out / "record.json").num_iterations == 2
    assert load_record(out / "record.json").potential == L2Potential().name


def test_cli_unwritable_output_is_a_runtime_failure(tmp_path, capsys, caplog):
    blocked = tmp_path / "blocked"
    blocked.write_text("a file where the output directory should go")
    with caplog.at_level(logging.ERROR):
        code = cli_main(["run-pmd", *FAST_EXACT, "--output-dir", str(blocked)])
    assert code == EXIT_FAILURE
    assert "pmdlab run-pmd" in capsys.readouterr().err
    assert any(r.levelno == logging.ERROR and "run-pmd failed" in r.getMessage() for r in caplog.records)


SAMPLED = ["--env", "open_room", "--iterations", "3", "--num-envs", "4", "--unroll-length", "8", "--pmd-seed", "3"]


@pytest.mark.parametrize("argv,csv_name", [
    (["run-pmd", *SAMPLED, "--update-mode", "inner_sgd"], "record.csv"),
    (["compare", *SAMPLED, "--update-mode", "closed_form", "--seeds", "2"], "curves.csv"),
    (["evolve", *FAST_EXACT, "--strategy", "sep-cma", "--generations", "2", "--population", "4", "--knots", "8",
      "--seed", "4"], "fitness.csv"),
], ids=["run-pmd", "compare", "evolve"])
def test_cli_csv_is_byte_identical_across_runs(tmp_path, argv, csv_name):
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert cli_main([*argv, "--output-dir", str(out)]) == EXIT_OK
        outputs.append((out / csv_name).read_bytes())
    assert outputs[0] == outputs[1]
    assert len(outputs[0].splitlines()) > 1
