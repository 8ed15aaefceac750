import json
import os
import shutil
from pathlib import Path

import pytest
import yaml

from cnemf.cli import EXIT_CONFIG, EXIT_OK, EXIT_REFUSED, main, write_atomic
from cnemf.config import NAgentSection, SolverSection, parse_config, validate
from cnemf.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
QUICK = CONFIGS / "sis-quick.yaml"


def write_config(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_minimal_config_materializes_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path, {"model": {"family": "heterogeneous-sis", "beta": 0.5}}))
    assert cfg.solver == SolverSection() and cfg.nagent == NAgentSection()
    assert cfg.seed == 0 and cfg.output == "out"
    assert len(cfg.config_hash()) == 16


def test_all_violations_are_listed_together():
    with pytest.raises(ConfigError) as err:
        validate({"model": {"family": "heterogeneous-sis", "beta": 1.2}, "solver": {"q": 0}, "colour": 1})
    text = str(err.value)
    assert "model.beta: must lie in (0, 1), got 1.2" in text
    assert "solver.q: must be an integer >= 1" in text and "colour: unknown top-level key" in text


def test_unknown_family_lists_the_available_ones():
    with pytest.raises(ConfigError, match="available: heterogeneous-sis, identity, threshold-graphon"):
        validate({"model": {"family": "sir", "beta": 0.5}})


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(str(tmp_path / "none.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_config(str(bad))


def test_exponent_notation_without_dot_is_a_number(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("model: {family: identity, beta: 0.5}\nsolver: {tol: 1e-6}\n")
    assert parse_config(str(path)).solver.tol == 1e-6


def test_hash_ignores_the_output_directory_but_not_the_seed():
    cfg = parse_config(str(QUICK))
    assert cfg.with_overrides(output="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.with_overrides(seed=1).config_hash() != cfg.config_hash()


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.yaml"):
        parse_config(str(path))


def test_selftest_exits_zero(capsys):
    assert main(["transport-selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_chaos_with_indivisible_n_is_refused(tmp_path, capsys):
    doc = yaml.safe_load(QUICK.read_text())
    doc["nagent"]["Ns"] = [2, 3]
    status = main(["chaos", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "o")])
    assert status == EXIT_REFUSED
    assert "does not divide N=3" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_config_exits_with_the_config_status(tmp_path, capsys):
    path = write_config(tmp_path, {"model": {"family": "identity", "beta": 2}})
    assert main(["solve-mf", "--config", path]) == EXIT_CONFIG
    assert "model.beta" in capsys.readouterr().err
    assert main(["solve-mf", "--config", str(QUICK), "--seed", str(2**64)]) == EXIT_CONFIG


def test_budget_refusal_exits_with_the_refused_status(tmp_path, capsys):
    doc = yaml.safe_load(QUICK.read_text())
    doc["nagent"]["budget"] = 100
    assert main(["solve-n", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_REFUSED
    assert "mc_policy_gain" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["solve-mf", "solve-n", "chaos", "transfer"])
def test_commands_write_stamped_reproducible_outputs(tmp_path, command, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main([command, "--config", str(QUICK), "--out", str(first)]) == EXIT_OK
    assert main([command, "--config", str(QUICK), "--out", str(second)]) == EXIT_OK
    names = sorted(os.listdir(first))
    assert names and names == sorted(os.listdir(second))
    digest = parse_config(str(QUICK)).config_hash()
    for name in names:
        assert digest in name
        text = (first / name).read_text()
        assert text == (second / name).read_text()
        if name.endswith(".csv"):
            assert text.startswith(f"# config_hash={digest} seed=0\n")
        else:
            doc = json.loads(text)
            assert doc["config_hash"] == digest and doc["seed"] == 0
    assert not [n for n in names if n.startswith(".tmp-")]


def test_transfer_table_columns(tmp_path, capsys):
    assert main(["transfer", "--config", str(QUICK), "--out", str(tmp_path)]) == EXIT_OK
    table = next(tmp_path.glob("transfer-*.csv")).read_text().splitlines()
    assert table[1].startswith("N,policy,mc_estimate,ci_halfwidth")
    assert [row.split(",")[1] for row in table[2:]] == ["direct", "matching"]


def test_atomic_write_replaces_in_place(tmp_path):
    target = tmp_path / "deep" / "f.txt"
    write_atomic(str(target), "one")
    write_atomic(str(target), "two")
    assert target.read_text() == "two" and os.listdir(target.parent) == ["f.txt"]
    shutil.rmtree(tmp_path / "deep")
