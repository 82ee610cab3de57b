import csv
import subprocess
import sys

import numpy as np
import pytest

from mgcrf import io
from mgcrf.cli import main

TINY_INI = """
[dataset]
rows = 5
cols = 5
steps = 3

[experiment]
mechanisms = Random
fractions = 0, 0.2
models = NN, i-GCRF, m-GCRF
repeats = 1
seed = 3

[nn]
max_epochs = 200
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def test_synth_writes_round_trippable_files(tmp_path):
    out = tmp_path / "ds"
    assert main(["synth", "--rows", "4", "--cols", "3", "--steps", "3", "--seed", "2", "-o", str(out)]) == 0
    g, r = io.load_graph(out / "graph.txt", with_predictions=True)
    assert (g.n_steps, g.n_nodes) == (3, 12) and r.shape == (1, 3, 12)
    p = io.load_params(out / "params.txt")
    np.testing.assert_allclose(p.alpha, [1.0])
    np.testing.assert_allclose(p.beta, [5.0])
    assert "seed" in (out / "provenance.txt").read_text()


def test_run_writes_results(tmp_path, tiny_config, capsys):
    assert main(["run", str(tiny_config), "-o", str(tmp_path / "res")]) == 0
    rows = list(csv.DictReader((tmp_path / "res" / "results.csv").open()))
    assert {r["model"] for r in rows} == {"NN", "i-GCRF", "m-GCRF"}
    assert "m-GCRF" in capsys.readouterr().out


def test_restrict_prints_rankings(tmp_path, tiny_config, capsys):
    code = main(["restrict", str(tiny_config), "--strategies", "Random,WeaklyConnected",
                 "--fractions", "0.2", "-o", str(tmp_path / "r")])
    assert code == 0
    assert "m-GCRF @ 0.20:" in capsys.readouterr().out
    assert (tmp_path / "r" / "restrict.csv").exists()


def test_bench(tmp_path, capsys):
    assert main(["bench", "--sizes", "4,6", "-o", str(tmp_path)]) == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("rows,cols")


@pytest.mark.parametrize("method,files", [("hgf", ["completed.txt"]), ("mi", ["completed_0.txt", "completed_1.txt"])])
def test_impute(tmp_path, method, files):
    main(["synth", "--rows", "4", "--cols", "4", "--steps", "2", "-o", str(tmp_path / "ds")])
    out = tmp_path / method
    code = main(["impute", str(tmp_path / "ds" / "graph.txt"), "--method", method, "--mechanism", "Random",
                 "--fraction", "0.25", "--samples", "2", "-o", str(out)])
    assert code == 0
    mask = io.load_mask(out / "mask.txt")
    assert (~mask.observed).sum() == 2 * 4
    original = io.load_graph(tmp_path / "ds" / "graph.txt")
    for name in files:
        g = io.load_graph(out / name)
        assert not np.isnan(g.labels).any()
        np.testing.assert_array_equal(g.labels[mask.observed], original.labels[mask.observed])


def test_bad_inputs_exit_nonzero(tmp_path):
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nfractions = 0.95\n")
    assert main(["run", str(bad)]) == 2
    (tmp_path / "g.txt").write_text("not a graph\n")
    assert main(["impute", str(tmp_path / "g.txt"), "-o", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as err:
        main(["synth"])
    assert err.value.code != 0


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "mgcrf", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "restrict" in done.stdout
