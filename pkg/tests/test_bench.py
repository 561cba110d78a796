import dataclasses

import numpy as np
import pandas as pd
import pytest

from aspus import bench
from aspus.simgen import Scenario
from aspus.spu import PermPlan

SMALL = Scenario(n=120, n_snps=4, n_causal=0, effect_a=0.0)
FAST = PermPlan(B=20, B_init=10)


def _spec(cells, **kw):
    kw.setdefault("replicates", 6)
    kw.setdefault("plan", FAST)
    return bench.ExperimentSpec(tuple(cells), **kw)


def test_alpha_one_rejects_everything():
    res = bench.run_type1(_spec([bench.Cell("null", SMALL)], alpha=1.0))
    assert res["null"].rate == 1.0 and res["null"].rejections == 6


def test_reproducible():
    spec = _spec([bench.Cell("null", SMALL)])
    a = bench.run_type1(spec)["null"].pvalues
    b = bench.run_type1(spec)["null"].pvalues
    np.testing.assert_array_equal(a, b)


def test_replicate_seeds_distinct():
    seeds = {bench.replicate_seed(1, c, r) for c in range(3) for r in range(100)}
    assert len(seeds) == 300


def test_type1_refuses_alternatives():
    with pytest.raises(ValueError, match="effect_a"):
        bench.run_type1(_spec([bench.Cell("alt", dataclasses.replace(SMALL, n_causal=1, effect_a=0.5))]))


def test_power_needs_alternative():
    with pytest.raises(ValueError):
        bench.run_power(_spec([bench.Cell("null", SMALL)]))


def test_clopper_pearson_shrinks():
    w1 = np.subtract(*bench.clopper_pearson(10, 200)[::-1])
    w2 = np.subtract(*bench.clopper_pearson(40, 800)[::-1])
    assert w2 < w1
    lo, hi = bench.clopper_pearson(0, 50)
    assert lo == 0 and 0 < hi < 0.1


def test_power_gain_pvalue():
    def cell(k, m=200):
        p = np.r_[np.zeros(k), np.ones(m - k)]
        return bench.CellResult("x", SMALL, p, k, k / m, 0, 1, 0, 0, 0, 0)

    assert bench.power_gain_pvalue(cell(150), cell(40)) < 1e-10
    assert bench.power_gain_pvalue(cell(40), cell(150)) > 0.99


def test_power_diagnostics_pairs():
    base = dataclasses.replace(SMALL, n_causal=1)
    cells = [bench.Cell(f"a{a}", dataclasses.replace(base, effect_a=a)) for a in (0.2, 0.6)]
    res = bench.run_power(_spec(cells, replicates=3))
    assert len(res.diagnostics) == 1
    d = res.diagnostics[0]
    assert (d["lower"], d["higher"]) == ("a0.2", "a0.6")


def test_qq_points():
    obs, exp = bench.qq_points([0.5, 0.01, 0.1])
    np.testing.assert_allclose(obs, -np.log10([0.01, 0.1, 0.5]))
    np.testing.assert_allclose(exp, -np.log10([0.25, 0.5, 0.75]))


def test_outputs(tmp_path):
    res = bench.run_type1(_spec([bench.Cell("c1", SMALL), bench.Cell("c2", SMALL)], replicates=4))
    bench.write_results_csv(res, tmp_path / "r.csv")
    bench.write_qq_csv(res, tmp_path / "q.csv")
    r = pd.read_csv(tmp_path / "r.csv")
    assert r.shape[0] == 2 and {"rate", "ci_low", "ci_high"} <= set(r.columns)
    assert pd.read_csv(tmp_path / "q.csv").shape[0] == 8


def test_cell_builders():
    cells = bench.type1_cells(sizes=(10, 50))
    assert [c.label for c in cells] == ["gene-independent-10", "gene-independent-50",
                                        "gene-correlated-10", "gene-correlated-50"]
    assert all(c.scenario.effect_a == 0 for c in cells)
    pw = bench.type1_cells(unit="pathway", lds=("independent",), sizes=(10,))
    assert pw[0].scenario.unit == "pathway" and pw[0].scenario.snps_per_gene == 10
    alt = bench.power_cells(n_causal=(1, 5), n_snps=(10,), effects=(0.2,))
    assert len(alt) == 2 and all(c.scenario.effect_a == 0.2 for c in alt)


def test_timing_small():
    tr = bench.run_timing(n=200, n_snps=10, B=30, replicates=2)
    assert tr.runtimes.size == 2 and (tr.runtimes > 0).all()
    assert tr.memory_ratio > 0


def test_permutation_scaling_near_linear():
    assert 1.6 <= bench.permutation_scaling() <= 2.4


def test_early_stop_saves_on_nulls():
    assert np.median(bench.early_stop_savings(genes=5)) <= 0.25
