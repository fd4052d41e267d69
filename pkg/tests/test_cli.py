import os

import numpy as np
import pytest

from proxqn.cli import main

ORTHANT_EXAMPLE = """\
# scaled prox: positive orthant worked example
# h: nonneg
# sign: +
# kappa: 1.0
# vector: x
1.0
-1.0
# vector: d
1.0
1.0
# vector: u
1.0
1.0
"""


@pytest.fixture
def env_cache(cache_dir, monkeypatch):
    monkeypatch.setenv("PROXQN_CACHE_DIR", cache_dir)
    return cache_dir


def test_solve_roundtrip_and_determinism(tmp_path, env_cache, capsys):
    args = ["solve", "--family", "lasso_gaussian", "--m", "30", "--n", "50",
            "--lambda", "0.1", "--solver", "zero-sr1", "--tol", "1e-8",
            "--seed", "7"]
    rc = main(args + ["--out", str(tmp_path / "a.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "final_error=" in out and "status=converged" in out
    rc = main(args + ["--out", str(tmp_path / "b.csv")])
    assert rc == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_solve_unknown_solver(env_cache, capsys):
    assert main(["solve", "--solver", "bogus"]) == 2
    assert "unknown solver" in capsys.readouterr().err


def test_prox_worked_example(tmp_path, capsys):
    path = tmp_path / "orthant.txt"
    path.write_text(ORTHANT_EXAMPLE)
    assert main(["prox", "--input", str(path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    np.testing.assert_allclose([float(v) for v in lines[:2]], [0.5, 0.0])
    assert "alpha_star=0.5 " in lines[2]
    assert "method=exact" in lines[2]

    assert main(["prox", "--input", str(path), "--finder", "bisection"]) == 0
    summary = capsys.readouterr().out.strip().splitlines()[2]
    alpha = float(summary.split()[0].split("=")[1])
    assert alpha == pytest.approx(0.5, abs=1e-9)


def test_prox_rank0_echoes_diagonal_prox(tmp_path, capsys):
    path = tmp_path / "diag.txt"
    path.write_text("# h: l1\n# lam: 1.0\n# vector: x\n2.0\n-3.0\n"
                    "# vector: d\n2.0\n1.0\n")
    assert main(["prox", "--input", str(path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    np.testing.assert_allclose([float(v) for v in lines[:2]], [1.5, -2.0])
    assert "method=diagonal" in lines[2]


def test_prox_malformed_file(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("# vector: x\nnot-a-number\n")
    assert main(["prox", "--input", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_prox_group_input(tmp_path, capsys):
    path = tmp_path / "group.txt"
    path.write_text("# h: group_l1l2\n# lam: 0.5\n# blocks: 2,2\n# sign: -\n"
                    "# vector: x\n1.0\n2.0\n-1.0\n0.5\n"
                    "# vector: d\n1.0\n1.0\n2.0\n2.0\n"
                    "# vector: u\n0.3\n-0.2\n0.1\n0.4\n")
    assert main(["prox", "--input", str(path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert "method=group" in lines[-1]


def test_validate_single_suite(capsys):
    assert main(["validate", "--suite", "metric"]) == 0
    assert capsys.readouterr().out.startswith("PASS metric")


def test_validate_filtered_prox_oracle(capsys):
    rc = main(["validate", "--suite", "prox-oracle", "--n", "12",
               "--count", "3"])
    assert rc == 0
    assert "PASS prox-oracle" in capsys.readouterr().out


def test_race_subcommand(tmp_path, env_cache, capsys):
    rc = main(["race", "--families", "lasso_diff3d", "--solvers",
               "zero-sr1,ista", "--out-dir", str(tmp_path / "rc"),
               "--gnuplot", "--jobs", "1", "--max-iters", "50000"])
    assert rc == 0
    files = sorted(os.listdir(tmp_path / "rc"))
    assert "manifest.json" in files and "plot.gp" in files
    assert sum(f.endswith(".csv") for f in files) == 2


def test_race_unknown_family(env_cache, capsys):
    assert main(["race", "--families", "made_up"]) == 2
