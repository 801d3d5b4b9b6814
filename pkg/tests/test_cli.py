import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from lopblock.aps import read_dataset_csv, write_dataset_csv
from lopblock.cli import main
from lopblock.penalty import eval_lop_constrained, eval_lop_penalized, lop_value, nonconvex_oracle


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def vectors(tmp_path):
    X = np.array([[5.0, 5.0, 0.1, 0.1], [1.0, -2.0, 3.0, 0.0]])
    path = tmp_path / "x.csv"
    write_dataset_csv(path, X)
    return X, path


class TestCertify:
    def write(self, tmp_path, x, blocks, beta):
        p = tmp_path / "cert.json"
        p.write_text(json.dumps(dict(x=x, blocks=blocks, beta=beta)))
        return p

    def test_passing_instance(self, tmp_path, capsys):
        p = self.write(tmp_path, [5, 5, 0.1, 0.1], [[0, 1], [2, 3]], 0.01)
        assert main(["certify", "--input", str(p)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["ok"] and out["all_ok"]
        ev = eval_lop_penalized(np.array([5, 5, 0.1, 0.1]), 0.01)
        assert out["certified_value"] == pytest.approx(ev.penalty, rel=1e-6)

    def test_flagged_instance(self, tmp_path, capsys):
        p = self.write(tmp_path, [5, 5, 0.1, 0.1], [[0, 1], [2, 3]], 0.3)
        assert main(["certify", "--input", str(p)]) == 1
        out = json.loads(capsys.readouterr().out)
        assert not out["beta_bound_ok"]

    def test_construction_error(self, tmp_path, capsys):
        p = self.write(tmp_path, [1, 0, 2], [[0, 2]], 0.1)
        assert main(["certify", "--input", str(p)]) == 2
        assert "support" in capsys.readouterr().err

    def test_missing_blocks(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(dict(x=[1, 2], beta=0.1)))
        assert main(["certify", "--input", str(p)]) == 2


class TestPenalty:
    def test_beta(self, vectors, capsys):
        X, path = vectors
        assert main(["penalty", "--input", str(path), "--beta", "0.1"]) == 0
        rows = rows_of(capsys.readouterr().out)
        assert [float(r["value"]) for r in rows] == [lop_value(x, 0.1) for x in X]

    def test_alpha(self, vectors, capsys):
        X, path = vectors
        assert main(["penalty", "--input", str(path), "--alpha", "0"]) == 0
        vals = [float(r["value"]) for r in rows_of(capsys.readouterr().out)]
        np.testing.assert_allclose(vals, [eval_lop_constrained(x, 0.0).value for x in X])
        np.testing.assert_allclose(vals, [2 * np.linalg.norm(x) for x in X], rtol=1e-6)

    def test_gme(self, vectors, capsys):
        X, path = vectors
        assert main(["penalty", "--input", str(path), "--beta", "0.1", "--gme",
                     "--omega", "0.5"]) == 0
        vals = [float(r["value"]) for r in rows_of(capsys.readouterr().out)]
        assert all(0 <= v <= lop_value(x, 0.1) for v, x in zip(vals, X))

    def test_gme_needs_beta(self, vectors):
        with pytest.raises(SystemExit):
            main(["penalty", "--input", str(vectors[1]), "--alpha", "1", "--gme"])

    def test_missing_file(self, tmp_path):
        assert main(["penalty", "--input", str(tmp_path / "none.csv"), "--beta", "1"]) == 2


def test_oracle(vectors, capsys):
    X, path = vectors
    assert main(["oracle", "--input", str(path), "--max-blocks", "2"]) == 0
    rows = rows_of(capsys.readouterr().out)
    for r, x in zip(rows, X):
        val, part = nonconvex_oracle(x, 2)
        assert float(r["value"]) == val
        assert len(r["blocks"].split()) == len(part.blocks)


@pytest.mark.parametrize("policy", ["true", "dataset"])
def test_gen(tmp_path, capsys, policy):
    out = tmp_path / "aps.csv"
    assert main(["gen", "--policy", policy, "--count", "5", "--out", str(out), "--n", "30"]) == 0
    X = read_dataset_csv(out)
    assert X.shape == (5, 30) and np.all(X >= 0) and np.all(X.max(axis=1) > 0)


def test_run(tmp_path, capsys):
    cfg = dict(schema_version=1, N=20, M_list=[4], T=100, trials=5, L=20, halpern_iters=50,
               master_seed=1, methods=[dict(name="nnls", kind="nnls"),
                                       dict(name="hybrid", kind="hybrid", grid=dict(mu=[0.01]))])
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out), "--trials", "2",
                 "--seed", "3"]) == 0
    rows = rows_of((out / "rows.csv").read_text())
    assert len(rows) == 4
    assert all(math.isfinite(float(r["nmse"])) for r in rows)
    assert "mean_nmse" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lopblock.cli", "--help"],
                         capture_output=True, text=True, check=True)
    for cmd in ("run", "certify", "penalty", "oracle", "gen"):
        assert cmd in res.stdout
