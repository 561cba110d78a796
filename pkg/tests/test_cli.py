import json

import pandas as pd
import pytest

from aspus.cli import main


@pytest.fixture
def sim_dir(tmp_path):
    d = tmp_path / "sim"
    assert main(["simulate", "--n", "150", "--n-snps", "6", "--effect", "0.5", "--seed", "3",
                 "--out-dir", str(d)]) == 0
    return d


def test_simulate_writes_files(sim_dir):
    for f in ("geno.csv", "pheno.csv", "covar.csv", "genemap.csv", "truth.csv", "scenario.json"):
        assert (sim_dir / f).exists()
    meta = json.loads((sim_dir / "scenario.json").read_text())
    assert meta["seed"] == 3 and 0 < meta["realized_event_rate"] < 1


def test_gene_scan_round_trip(sim_dir, tmp_path):
    out = tmp_path / "res.csv"
    args = ["test", "--geno", str(sim_dir / "geno.csv"), "--pheno", str(sim_dir / "pheno.csv"),
            "--covar", str(sim_dir / "covar.csv"), "--genemap", str(sim_dir / "genemap.csv"),
            "--B", "50", "--B-init", "10", "--out", str(out)]
    assert main(args) == 0
    df = pd.read_csv(out)
    assert df.unit_id.tolist() == ["gene1"] and df.n_snps.tolist() == [6]
    first = df.p_aspus.iloc[0]
    assert main(args) == 0
    assert pd.read_csv(out).p_aspus.iloc[0] == first


def test_pathway_scan(tmp_path):
    d = tmp_path / "pw"
    assert main(["simulate", "--unit", "pathway", "--n", "100", "--n-genes", "4", "--snps-per-gene", "3",
                 "--n-causal-genes", "1", "--out-dir", str(d)]) == 0
    out = tmp_path / "res.csv"
    assert main(["test", "--geno", str(d / "geno.csv"), "--pheno", str(d / "pheno.csv"),
                 "--covar", str(d / "covar.csv"), "--genemap", str(d / "genemap.csv"),
                 "--pathways", str(d / "pathway.csv"), "--B", "20", "--B-init", "20",
                 "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert df.unit_type.tolist() == ["pathway"]
    assert "p_spu_8_8" in df.columns


def test_bad_input_exit_code(sim_dir, tmp_path, capsys):
    rc = main(["test", "--geno", str(tmp_path / "missing.csv"), "--pheno", str(sim_dir / "pheno.csv"),
               "--genemap", str(sim_dir / "genemap.csv"), "--out", str(tmp_path / "x.csv")])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_bench_type1_small(tmp_path, capsys):
    assert main(["bench-type1", "--sizes", "4", "--lds", "independent", "--n", "100", "-R", "3",
                 "--B", "20", "--B-init", "10", "--out-dir", str(tmp_path)]) == 0
    df = pd.read_csv(tmp_path / "results.csv")
    assert df.cell.tolist() == ["gene-independent-4"]
    assert "rate=" in capsys.readouterr().out
