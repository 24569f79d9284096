import json

import pytest

from cplcalib import cli


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return cli.main(list(argv))


def test_gen_all_and_single(workdir):
    assert run("gen", "--all", "--points", "20", "--out", "all") == 0
    assert len(list((workdir / "all").glob("*.cvgl"))) == 49
    assert run("gen", "--town", "2", "--config-index", "23", "--points", "20", "--out", "one") == 0
    assert [p.name for p in (workdir / "one").glob("*.cvgl")] == ["town2_cfg23.cvgl"]
    manifest = json.loads((workdir / "one" / "gen.manifest.json").read_text())
    assert manifest["schema_version"] == "cplcalib-manifest/1"
    assert set(manifest["artifact_hashes"]) == {"one/town2_cfg23.cvgl"}


@pytest.mark.parametrize("argv", [
    ["gen", "--all", "--points", "0"],
    ["gen", "--points", "10"],
    ["gen", "--town", "1", "--config-index", "25"],
    ["estimate"],
    ["check-grad", "--trials", "0"],
    ["bogus"],
])
def test_usage_errors(workdir, argv):
    assert run(*argv) == cli.EXIT_USAGE


def test_missing_data_file_is_io_error(workdir):
    assert run("estimate", "--data", "nope.cvgl") == cli.EXIT_IO


def test_estimate_and_eval(workdir, capsys):
    assert run("gen", "--town", "1", "--config-index", "8", "--points", "200", "--out", "d") == 0
    data = "d/town1_cfg08.cvgl"
    assert run("estimate", "--data", data, "--init", "gt", "--out", "r/gt.json") == 0
    gt = json.loads((workdir / "r" / "gt.json").read_text())
    assert gt["iterations"] == 0 and gt["converged"]
    assert run("estimate", "--data", data, "--seed", "2", "--out", "r/pert.json") == 0
    pert = json.loads((workdir / "r" / "pert.json").read_text())
    assert max(v for k, v in pert["nmae"].items() if v is not None) < 0.05

    capsys.readouterr()
    assert run("eval", "--results", "r/gt.json", "--format", "csv") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split(",")[1:] == ["f_x", "f_y", "u_0", "v_0", "b", "d", "t_x", "t_y", "t_z", "θ_p"]
    assert lines[1].split(",")[1:] == ["0.000"] * 10

    assert run("eval", "--results", "r", "--format", "markdown", "--out", "table.md") == 0
    assert (workdir / "table.md").read_text().count("\n") >= 4


def test_eval_malformed_result(workdir, capsys):
    (workdir / "bad.json").write_text("{broken")
    assert run("eval", "--results", "bad.json") == cli.EXIT_IO
    assert "bad.json" in capsys.readouterr().err


def test_check_grad_exit_codes(workdir):
    assert run("check-grad", "--trials", "20", "--tolerance", "1e-5") == 0
    assert run("check-grad", "--trials", "5", "--tolerance", "0") == cli.EXIT_VERIFY


def test_replay_reproduces(workdir):
    assert run("gen", "--town", "1", "--config-index", "0", "--points", "30", "--out", "g") == 0
    assert run("replay", "g/gen.manifest.json") == 0
    (workdir / "g" / "town1_cfg00.cvgl").write_text("x")
    assert run("replay", "g/gen.manifest.json") == 0
