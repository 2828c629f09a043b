import json
import subprocess
import sys

import numpy as np
import pytest

from tetadapt.cli import main
from tetadapt.io import read_mesh, read_sol, write_mesh, write_sol
from tetadapt.mesh import cube_mesh, validate

from conftest import uniform_metric


@pytest.fixture
def inputs(tmp_path):
    m = cube_mesh(3)
    write_mesh(tmp_path / "in.mesh", m)
    write_sol(tmp_path / "in.sol", uniform_metric(64, 0.2))
    return tmp_path


def test_adapt_command(inputs, capsys):
    out = inputs / "out.mesh"
    rc = main(["adapt", "--mesh", str(inputs / "in.mesh"), "--metric", str(inputs / "in.sol"),
               "--out", str(out), "--complexity", "300"])
    assert rc == 0
    m = read_mesh(out)
    assert validate(m) == []
    assert read_sol(inputs / "out.sol", m.n_vertices).shape == (m.n_vertices, 6)
    text = capsys.readouterr().out
    assert "vertices" in text and "reconnect" in text


def test_adapt_with_gradation_and_threads(inputs):
    rc = main(["adapt", "--mesh", str(inputs / "in.mesh"), "--metric", str(inputs / "in.sol"),
               "--out", str(inputs / "g.mesh"), "--gradation", "1.5", "--threads", "2"])
    assert rc == 0


def test_validate_and_stats(inputs, capsys):
    assert main(["validate", str(inputs / "in.mesh")]) == 0
    assert "64 vertices" in capsys.readouterr().out
    assert main(["stats", str(inputs / "in.mesh"), "--metric", str(inputs / "in.sol")]) == 0
    st = json.loads(capsys.readouterr().out)
    assert st["n_vertices"] == 64 and st["n_tets"] == 162


def test_errors_return_two(inputs, capsys):
    bad = inputs / "bad.mesh"
    bad.write_text("MeshVersionFormatted 2\nDimension 3\nBogus\n")
    assert main(["validate", str(bad)]) == 2
    assert "bad.mesh:3" in capsys.readouterr().err
    assert main(["validate", str(inputs / "missing.mesh")]) == 2
    write_sol(inputs / "s.sol", np.ones(64))
    assert main(["adapt", "--mesh", str(inputs / "in.mesh"), "--metric", str(inputs / "s.sol"),
                 "--out", str(inputs / "o.mesh")]) == 2


def test_bench_commands(tmp_path, capsys):
    csv_a = tmp_path / "a.csv"
    assert main(["bench", "analytic", "--field", "tanh3", "--levels", "100,200", "--iterations", "1",
                 "--out", str(csv_a)]) == 0
    assert "convergence slope" in capsys.readouterr().out
    assert csv_a.read_text().startswith("level,complexity,iteration")
    csv_s = tmp_path / "s.csv"
    assert main(["bench", "speedup", "--cube", "3", "--complexity", "150", "--workers", "1,2",
                 "--repetitions", "1", "--out", str(csv_s)]) == 0
    assert "speedup" in capsys.readouterr().out
    assert csv_s.read_text().startswith("workers,module,seconds")


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "tetadapt.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("adapt", "bench", "validate", "stats"):
        assert cmd in r.stdout
