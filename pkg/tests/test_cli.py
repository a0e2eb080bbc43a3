import csv
from pathlib import Path

import pytest

from qrsim import backend
from qrsim.cli import main

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture
def small_params(tmp_path):
    p = tmp_path / "small.params"
    p.write_text("distant_measure_count = 90\nbuffers = 10\nchannel_x_error_rate = 0.01\n"
                 "initiator = A\nresponder = Z\n")
    return p


@pytest.fixture(autouse=True)
def restore_backend():
    previous = backend.active()
    yield
    backend.use(previous)


def test_run_writes_reports(tmp_path, small_params, capsys):
    out = tmp_path / "out"
    trace = tmp_path / "trace.txt"
    code = main(["run", "--topology", str(CONFIGS / "chain3.topo"), "--params", str(small_params),
                 "--out", str(out), "--trace", str(trace), "--dump-rulesets"])
    assert code == 0
    text = capsys.readouterr().out
    assert "RuleSet" in text and "connection 0 A->Z" in text
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert rows[0]["measurements"] == "90"
    assert (out / "summary.txt").exists() and (out / "kernel_stats.csv").exists()
    assert trace.read_text().count("\n") > 100


def test_run_seed_flag_changes_results(tmp_path, small_params):
    outs = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        assert main(["run", "--topology", str(CONFIGS / "chain3.topo"), "--params", str(small_params),
                     "--seed", str(seed), "--out", str(out)]) == 0
        outs.append((out / "results.csv").read_text())
    assert outs[0] != outs[1]


def test_run_with_python_backend(tmp_path, small_params):
    assert main(["--backend", "python", "run", "--topology", str(CONFIGS / "chain3.topo"),
                 "--params", str(small_params), "--out", str(tmp_path)]) == 0
    assert backend.active() == "python"


def test_bundled_default_params_parse(tmp_path):
    from qrsim.config_io import parse_params

    p = parse_params((CONFIGS / "default.params").read_text())
    assert p.emission_success_probability == 0.8
    assert p.qnic_size == 100


def test_validate_small_sweep(tmp_path, capsys):
    code = main(["validate", "--distances", "1,2", "--measurements", "450", "--repeats", "2",
                 "--out", str(tmp_path)])
    rows = list(csv.DictReader((tmp_path / "validation.csv").open()))
    assert [r["distance_km"] for r in rows] == ["1", "2"]
    assert code == (0 if all(r["within"] == "1" for r in rows) else 1)
    assert "F_analytic" in capsys.readouterr().out


def test_bench_small_sweep(tmp_path, capsys):
    code = main(["bench", "--repeaters", "1,2,3", "--qnic-size", "10", "--pairs", "45",
                 "--no-backends", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "bench.csv").open()))
    assert [r["repeaters"] for r in rows] == ["1", "2", "3"]
    assert "quadratic fit of cpu/pair" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["run"],
    ["run", "--topology"],
    ["--backend", "gpu", "run", "--topology", "x"],
])
def test_bad_arguments_exit_2(argv):
    assert main(argv) == 2


def test_missing_topology_file(tmp_path, capsys):
    assert main(["run", "--topology", str(tmp_path / "nope.topo")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_malformed_params_file(tmp_path, capsys):
    bad = tmp_path / "bad.params"
    bad.write_text("Measurement_error_rate = 1.5\n")
    assert main(["run", "--topology", str(CONFIGS / "two_hop.topo"), "--params", str(bad)]) == 2
    assert "measurement_error_rate" in capsys.readouterr().err


def test_unwritable_output_is_fatal(tmp_path, small_params):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--topology", str(CONFIGS / "chain3.topo"), "--params", str(small_params),
                 "--out", str(blocker / "sub")]) == 1


def test_help_exits_cleanly():
    assert main(["--help"]) == 0
