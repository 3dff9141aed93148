import json
import os
import subprocess
import sys

import pytest

from rdsys.cli import (EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_OK, EXIT_UNKNOWN_STAGE,
                       EXIT_UNWRITABLE, EXIT_USAGE, main, parse_grid)
from rdsys.credit import get_scenario

FAST = ["--grid", "60x40", "--paths", "300", "--steps", "20"]


def run(tmp_path, *args):
    return main(["run", "--out", str(tmp_path), *FAST, *args])


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert "crash_at_default_linked" in capsys.readouterr().out


def test_grid_parser():
    assert parse_grid("200x150") == (200, 150)
    with pytest.raises(Exception):
        parse_grid("200")


def test_default_stages_pass(tmp_path):
    assert run(tmp_path, "--scenario", "defaultable_bond_treasury") == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] and summary["exit_code"] == 0
    assert summary["stages"] == ["validate", "solve-pde", "check-truncation"]
    assert summary["scenario"] == "defaultable_bond_treasury"
    assert len(summary["config_hash"]) == 64
    assert (tmp_path / "surface.csv").exists()


def test_oracle_check_fails_on_coarse_grid(tmp_path):
    code = main(["run", "--out", str(tmp_path), "--scenario", "crash_at_default", "--grid", "10x2",
                 "--stages", "solve-pde,check-oracle"])
    assert code == EXIT_CHECK_FAILED
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert not summary["passed"]


def test_unknown_stage(tmp_path):
    assert run(tmp_path, "--scenario", "contagion_basket", "--stages", "bake") == EXIT_UNKNOWN_STAGE


def test_missing_dependency(tmp_path):
    assert run(tmp_path, "--scenario", "contagion_basket", "--stages", "check-cross") == \
        EXIT_DEPENDENCY


def test_unknown_scenario_and_bad_config(tmp_path):
    assert run(tmp_path, "--scenario", "nope") == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [1, 2\n")
    assert run(tmp_path / "o", "--config", str(bad)) == EXIT_CONFIG


def test_oracle_needs_a_reference(tmp_path):
    assert run(tmp_path, "--scenario", "defaultable_bond_linked",
               "--stages", "solve-pde,check-oracle") == EXIT_CONFIG


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(blocker / "sub", "--scenario", "contagion_basket") == EXIT_UNWRITABLE


def test_argparse_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["run", "--out", str(tmp_path), "--scenario", "contagion_basket", "--grid", "abc"])
    assert err.value.code == EXIT_USAGE


def test_config_file_runs(tmp_path):
    import yaml
    sc = get_scenario("defaultable_bond_market_value")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(sc.to_dict()))
    assert run(tmp_path / "o", "--config", str(cfg), "--stages", "solve-pde,check-oracle", "--grid", "200x200") == EXIT_OK


def test_runs_are_byte_identical(tmp_path):
    stages = ["--stages", "validate,solve-pde,simulate,check-martingale,hedge,check-hedge"]
    args = ["--scenario", "crash_at_default_linked", *stages]
    assert run(tmp_path / "a", *args) in (EXIT_OK, EXIT_CHECK_FAILED)
    assert run(tmp_path / "b", *args) in (EXIT_OK, EXIT_CHECK_FAILED)
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    assert {"paths.csv", "hedge_paths.csv", "summary.json"} <= set(names)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rdsys", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "contagion_basket" in proc.stdout
