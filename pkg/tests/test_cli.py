import csv
import json
from pathlib import Path

import pytest

from switchbudget import cli, lemmas
from switchbudget.config import load_config, parse_config
from switchbudget.errors import (
    BudgetTooSmallError,
    BudgetViolation,
    ConfigError,
    DomainError,
    InsufficientDataError,
    ParseError,
)

GOLDEN = Path(__file__).parent / "golden"

MINIMAL = """
[adversary]
generator = stochastic_gap
T = 1000
K = 4
gap = 0.2
base = 0.4

[learner]
mode = full
budget = 64

[engine]
repetitions = 10
base_seed = 3
"""


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def golden(name):
    return (GOLDEN / name).read_text().strip().split(",")


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture(autouse=True)
def _no_env_out_dir(monkeypatch):
    monkeypatch.delenv(cli.OUT_DIR_ENV, raising=False)


def test_run_minimal(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL)
    assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    assert header(out / "stats.csv") == golden("stats_header.csv")
    assert header(out / "runs.csv") == golden("runs_header.csv")
    rows = list(csv.reader((out / "stats.csv").open()))
    assert len(rows) == 2
    assert len(list(csv.reader((out / "runs.csv").open()))) == 11
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config_file"]["learner"] == {"mode": "full", "budget": "64"}
    assert meta["config_resolved"]["engine"]["repetitions"] == 10
    assert meta["spec"]["feedback_mode"] == "FULL"
    assert meta["constants"]["c1"] == 0.1
    assert "created_utc" in meta
    assert "mean regret" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    for d in ("a", "b"):
        assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path / d)]) == 0
    for name in ("stats.csv", "runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flag_overrides(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", cfg, "--out-dir", str(out), "--seed", "100", "--reps", "4",
                     "--threads", "1", "--export-trajectories"]) == 0
    seeds = [r[0] for r in list(csv.reader((out / "runs.csv").open()))[1:]]
    assert seeds == [str(100 ^ r) for r in range(4)]
    assert header(out / "trajectories.csv") == golden("trajectories_header.csv")
    rows = list(csv.reader((out / "trajectories.csv").open()))[1:]
    # N = 64/4 = 16, tau' = ceil(1000/16) = 63, so floor(1000/63) = 15 batches fit
    assert len(rows) == 4 * 15
    assert rows[0][6] == "0;1;2;3"


def test_env_out_dir(tmp_path, monkeypatch):
    cfg = write(tmp_path, MINIMAL)
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--config", cfg]) == 0
    assert (tmp_path / "env" / "stats.csv").exists()


def test_budget_below_k_is_spec_error(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL.replace("budget = 64", "budget = 3"))
    assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == cli.EXIT_SPEC
    assert "K <= B" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    MINIMAL + "\n[extra]\nx = 1\n",
    MINIMAL.replace("base_seed = 3", "base_seed = 3\nbogus = 1"),
    MINIMAL.replace("mode = full", "mode = greedy"),
    MINIMAL.replace("repetitions = 10", "repetitions = ten"),
    "not an ini file",
])
def test_config_errors(tmp_path, text):
    cfg = write(tmp_path, text)
    assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


def test_usage_error_exit_code():
    assert cli.main(["run"]) == cli.EXIT_CONFIG


def test_budget_violation_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise BudgetViolation("over")

    monkeypatch.setattr(cli, "run_repetitions", boom)
    cfg = write(tmp_path, MINIMAL)
    assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == cli.EXIT_BUDGET


def test_exit_codes_are_disjoint():
    codes = {
        cli.exit_code_for(ConfigError("x")),
        cli.exit_code_for(BudgetTooSmallError("x")),
        cli.exit_code_for(BudgetViolation("x")),
        cli.exit_code_for(InsufficientDataError("x")),
        cli.exit_code_for(ParseError("x")),
        cli.exit_code_for(DomainError("x")),
        cli.EXIT_VERIFY,
        cli.EXIT_OK,
        cli.exit_code_for(RuntimeError("x")),
    }
    assert codes == {0, 1, 2, 3, 4, 5, 6, 7}


def test_sweep_budget(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    out = tmp_path / "s"
    rc = cli.main(["sweep", "--config", cfg, "--out-dir", str(out), "--axis", "BUDGET_B",
                   "--values", "16,64,256,1024"])
    assert rc == 0
    assert header(out / "stats.csv") == golden("sweep_stats_header.csv")
    assert header(out / "fit.csv") == golden("fit_header.csv")
    assert header(out / "plot.csv") == golden("plot_header.csv")
    assert len(list(csv.reader((out / "stats.csv").open()))) == 5
    fit = list(csv.reader((out / "fit.csv").open()))
    assert len(fit) == 2 and fit[1][0] == "BUDGET_B" and fit[1][1] != ""


def test_sweep_single_value_writes_runs_then_fails(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    out = tmp_path / "s"
    rc = cli.main(["sweep", "--config", cfg, "--out-dir", str(out), "--axis", "BUDGET_B", "--values", "64"])
    assert rc == cli.EXIT_INSUFFICIENT
    assert len(list(csv.reader((out / "stats.csv").open()))) == 2
    assert "fit_error" in json.loads((out / "metadata.json").read_text())
    assert not (out / "fit.csv").exists()


def test_sweep_horizon_bandit_hard(tmp_path):
    text = """
[adversary]
generator = hard
K = 4

[learner]
mode = router
budget = 0

[engine]
setting = EXTRA_BUDGET
repetitions = 4
"""
    cfg = write(tmp_path, text)
    out = tmp_path / "h"
    rc = cli.main(["sweep", "--config", cfg, "--out-dir", str(out), "--axis", "HORIZON_T",
                   "--values", "256,512,1024"])
    assert rc == 0
    fit = list(csv.reader((out / "fit.csv").open()))
    assert fit[1][0] == "HORIZON_T" and float(fit[1][1]) > 0


def test_sweep_values_must_ascend(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    rc = cli.main(["sweep", "--config", cfg, "--out-dir", str(tmp_path), "--axis", "BUDGET_B",
                   "--values", "64,16,256"])
    assert rc == cli.EXIT_CONFIG


def test_verify_quick(capsys):
    assert cli.main(["verify", "--quick"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS") for line in lines)


def test_verify_failure_names_lemma(monkeypatch, capsys):
    monkeypatch.setattr(lemmas, "run_all", lambda quick=False: [
        lemmas.LemmaResult("unbiasedness", False, "broken"),
        lemmas.LemmaResult("delta_rho_tables", True, "ok"),
    ])
    assert cli.main(["verify"]) == cli.EXIT_VERIFY
    captured = capsys.readouterr()
    assert "FAIL unbiasedness" in captured.out
    assert "unbiasedness" in captured.err


def test_gen_instance_round_trip(tmp_path):
    path = tmp_path / "inst.csv"
    assert cli.main(["gen-instance", "-T", "64", "-K", "3", "--seed", "2", "-o", str(path)]) == 0
    assert header(path) == golden("instance_header.csv")
    meta = json.loads((tmp_path / "inst.csv.meta.json").read_text())
    assert meta["T"] == 64 and meta["K"] == 3 and meta["generator"] == "hard"
    text = f"""
[adversary]
generator = file
path = {path}

[learner]
mode = bandit
budget = 16

[engine]
repetitions = 3
"""
    cfg = write(tmp_path, text)
    assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 0


def test_gen_instance_regime_error(tmp_path):
    rc = cli.main(["gen-instance", "-T", "16", "-K", "4", "--c2", "50", "-o", str(tmp_path / "x.csv")])
    assert rc == cli.EXIT_DATA


def test_parse_config_echo_and_defaults(tmp_path):
    cfg = parse_config(MINIMAL)
    assert cfg.adversary.T == 1000 and cfg.learner.budget == 64
    assert cfg.engine.setting == "TOTAL_BUDGET" and cfg.output.export_trajectories is False
    assert cfg.source["adversary"]["gap"] == "0.2"
    assert load_config(write(tmp_path, MINIMAL)) == cfg


@pytest.mark.parametrize("text", [
    "[learner]\nmode = flex\nbudget = 10\n",
    "[learner]\nmode = router\nbudget = 10\n",
    "[adversary]\ngenerator = file\n",
    "[engine]\nsetting = SOMETIMES\n",
])
def test_config_consistency_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
