"""Replicate orchestration for Type I error, power and timing experiments."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .coxnull import fit_null
from .score_engine import build_weight_table
from .simgen import Scenario, build_scenario
from .spu import GammaGrid, PermPlan, run_adaptive_test

log = logging.getLogger(__name__)

EFFECT_SIZES = (0.0, 0.2, 0.3, 0.4, 0.5, 0.6)


@dataclass(frozen=True)
class Cell:
    label: str
    scenario: Scenario


@dataclass(frozen=True)
class ExperimentSpec:
    cells: tuple
    replicates: int = 200
    alpha: float = 0.05
    plan: PermPlan = field(default_factory=PermPlan)
    workers: int = 1
    seed: int = 2024

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        labels = [c.label for c in self.cells]
        if len(set(labels)) != len(labels):
            raise ValueError("cell labels must be unique")


@dataclass
class CellResult:
    label: str
    scenario: Scenario
    pvalues: np.ndarray
    rejections: int
    rate: float
    ci_low: float
    ci_high: float
    mean_runtime: float
    mean_perms: float
    early_stop_fraction: float
    mean_event_rate: float

    def row(self) -> dict:
        s = self.scenario
        return {
            "cell": self.label,
            "unit": s.unit,
            "ld": s.ld,
            "n_snps": s.n_snps if s.unit == "gene" else s.snps_per_gene,
            "n_causal": s.n_causal_snps,
            "effect_a": s.effect_a,
            "drop_causal": int(s.drop_causal),
            "replicates": self.pvalues.size,
            "rejections": self.rejections,
            "rate": self.rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "mean_runtime_s": self.mean_runtime,
            "mean_perms": self.mean_perms,
            "early_stop_fraction": self.early_stop_fraction,
            "mean_event_rate": self.mean_event_rate,
        }


@dataclass
class ExperimentResult:
    cells: list
    alpha: float
    diagnostics: list = field(default_factory=list)

    def __getitem__(self, label) -> CellResult:
        for c in self.cells:
            if c.label == label:
                return c
        raise KeyError(label)


def replicate_seed(master, cell_index, rep) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(cell_index, rep)).generate_state(1)[0])


def run_replicate(scenario: Scenario, plan: PermPlan, grid=None) -> dict:
    """Simulate, fit the null, and test the simulated unit once."""
    out = build_scenario(scenario)
    t0 = time.perf_counter()
    nm = fit_null(out.dataset)
    wt = build_weight_table(out.dataset, nm, allow_unconverged=True)
    res = run_adaptive_test(out.dataset, wt, out.unit, grid, plan, out.genemap)
    return {
        "p": res.p_aspus,
        "runtime": time.perf_counter() - t0,
        "perms": res.perms_used,
        "early": res.early_stopped,
        "event_rate": out.truth.event_rate,
        "converged": nm.converged,
    }


def _task(args):
    scenario, plan = args
    return run_replicate(scenario, plan)


def clopper_pearson(k, n, level=0.95):
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return ci.low, ci.high


def run_experiment(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Run every cell for ``spec.replicates`` replicates with derived seeds."""
    tasks, index = [], []
    for ci, cell in enumerate(spec.cells):
        for rep in range(spec.replicates):
            seed = replicate_seed(spec.seed, ci, rep)
            sc = dataclasses.replace(cell.scenario, seed=seed)
            plan = dataclasses.replace(spec.plan, seed=seed)
            tasks.append((sc, plan))
            index.append(ci)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as ex:
            outs = list(ex.map(_task, tasks, chunksize=8))
    else:
        outs = []
        for i, t in enumerate(tasks):
            outs.append(_task(t))
            if progress and (i + 1) % 100 == 0:
                progress(i + 1, len(tasks))

    results = []
    index = np.asarray(index)
    for ci, cell in enumerate(spec.cells):
        rows = [o for o, k in zip(outs, index) if k == ci]
        p = np.array([o["p"] for o in rows])
        k = int(np.count_nonzero(p <= spec.alpha))
        lo, hi = clopper_pearson(k, p.size)
        n_unconv = sum(not o["converged"] for o in rows)
        if n_unconv:
            log.warning("%s: %d replicates with unconverged null fit", cell.label, n_unconv)
        results.append(CellResult(
            label=cell.label,
            scenario=cell.scenario,
            pvalues=p,
            rejections=k,
            rate=k / p.size,
            ci_low=lo,
            ci_high=hi,
            mean_runtime=float(np.mean([o["runtime"] for o in rows])),
            mean_perms=float(np.mean([o["perms"] for o in rows])),
            early_stop_fraction=float(np.mean([o["early"] for o in rows])),
            mean_event_rate=float(np.mean([o["event_rate"] for o in rows])),
        ))
    return ExperimentResult(results, spec.alpha)


def run_type1(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Rejection rates of null cells (``effect_a == 0`` everywhere)."""
    bad = [c.label for c in spec.cells if c.scenario.effect_a != 0]
    if bad:
        raise ValueError(f"Type I error cells must have effect_a = 0: {bad}")
    return run_experiment(spec, progress)


def power_gain_pvalue(hi: CellResult, lo: CellResult) -> float:
    """One-sided Fisher exact p-value for ``power(hi) > power(lo)``."""
    table = [[hi.rejections, hi.pvalues.size - hi.rejections],
             [lo.rejections, lo.pvalues.size - lo.rejections]]
    return float(stats.fisher_exact(table, alternative="greater")[1])


def _same_but_effect(a: Scenario, b: Scenario):
    return dataclasses.replace(a, effect_a=0.0) == dataclasses.replace(b, effect_a=0.0)


def run_power(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Rejection rates of alternative cells plus effect-size monotonicity diagnostics.

    For cells that differ only in ``effect_a``, each consecutive pair (by
    increasing effect) gets a one-sided test of increasing power.
    """
    if not any(c.scenario.effect_a > 0 for c in spec.cells):
        raise ValueError("power experiments need at least one cell with effect_a > 0")
    res = run_experiment(spec, progress)
    groups: list = []
    for c in res.cells:
        for g in groups:
            if _same_but_effect(g[0].scenario, c.scenario):
                g.append(c)
                break
        else:
            groups.append([c])
    for g in groups:
        g.sort(key=lambda c: c.scenario.effect_a)
        for lo, hi in zip(g, g[1:]):
            res.diagnostics.append({
                "lower": lo.label,
                "higher": hi.label,
                "power_lower": lo.rate,
                "power_higher": hi.rate,
                "p_increase": power_gain_pvalue(hi, lo),
            })
    return res


# ---------------------------------------------------------------------------
# timing and memory
# ---------------------------------------------------------------------------

@dataclass
class TimingResult:
    n: int
    n_snps: int
    B: int
    runtimes: np.ndarray  # seconds per gene test, full B permutations
    build_times: np.ndarray  # null fit + weight table
    peak_bytes: np.ndarray  # traced allocation high-water mark during the gene test
    dataset_bytes: int

    @property
    def memory_ratio(self) -> float:
        return float(self.peak_bytes.max() / self.dataset_bytes)

    def row(self) -> dict:
        return {
            "n": self.n,
            "n_snps": self.n_snps,
            "B": self.B,
            "replicates": self.runtimes.size,
            "median_runtime_s": float(np.median(self.runtimes)),
            "mean_runtime_s": float(np.mean(self.runtimes)),
            "median_build_s": float(np.median(self.build_times)),
            "peak_test_bytes": int(self.peak_bytes.max()),
            "dataset_bytes": self.dataset_bytes,
            "memory_ratio": self.memory_ratio,
        }


def _prepared(n, n_snps, seed, ld="independent"):
    out = build_scenario(Scenario(n=n, n_snps=n_snps, n_causal=0, ld=ld, seed=seed))
    t0 = time.perf_counter()
    nm = fit_null(out.dataset)
    wt = build_weight_table(out.dataset, nm, allow_unconverged=True)
    return out, wt, time.perf_counter() - t0


def run_timing(n=2000, n_snps=80, B=500, replicates=10, seed=7) -> TimingResult:
    """Time full-``B`` gene tests and trace their peak allocations (single process).

    Memory is the ``tracemalloc`` high-water mark of allocations made during
    the test itself, after the dataset and weight table exist.
    """
    runtimes, builds, peaks = [], [], []
    plan = PermPlan(B=B, B_init=min(40, B), theta=1.0)
    dataset_bytes = 0
    for rep in range(replicates):
        out, wt, build = _prepared(n, n_snps, replicate_seed(seed, 0, rep))
        dataset_bytes = out.dataset.geno.nbytes
        p = dataclasses.replace(plan, seed=rep)
        t0 = time.perf_counter()
        run_adaptive_test(out.dataset, wt, out.unit, None, p)
        runtimes.append(time.perf_counter() - t0)
        tracemalloc.start()
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        run_adaptive_test(out.dataset, wt, out.unit, None, p)
        peaks.append(tracemalloc.get_traced_memory()[1] - base)
        tracemalloc.stop()
        builds.append(build)
    return TimingResult(n, n_snps, B, np.array(runtimes), np.array(builds), np.array(peaks), dataset_bytes)


def time_test(dataset, wt, unit, plan, repeats=5) -> float:
    """Best-of-``repeats`` wall time of one adaptive test."""
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_adaptive_test(dataset, wt, unit, None, plan)
        best = min(best, time.perf_counter() - t0)
    return best


def permutation_scaling(n=2000, n_snps=80, b_small=40, b_large=80, seed=11, repeats=41) -> float:
    """Runtime ratio of ``b_large`` to ``b_small`` full permutation runs on one prepared gene."""
    out, wt, _ = _prepared(n, n_snps, seed)
    small = PermPlan(B=b_small, B_init=b_small, theta=1.0, seed=seed)
    large = PermPlan(B=b_large, B_init=b_small, theta=1.0, seed=seed)
    # interleave the two plans so load drift hits both alike
    best_small = best_large = math.inf
    for _ in range(repeats):
        best_small = min(best_small, time_test(out.dataset, wt, out.unit, small, 1))
        best_large = min(best_large, time_test(out.dataset, wt, out.unit, large, 1))
    return best_large / best_small


def early_stop_savings(n=2000, n_snps=80, genes=10, seed=13, B=500, B_init=40, repeats=3):
    """Per null gene, runtime with ``theta=0.1`` over runtime with ``theta=1``; returns the ratios."""
    ratios = []
    for g in range(genes):
        out, wt, _ = _prepared(n, n_snps, replicate_seed(seed, 1, g))
        fast = PermPlan(B=B, B_init=B_init, theta=0.1, seed=g)
        full = PermPlan(B=B, B_init=B_init, theta=1.0, seed=g)
        ratios.append(time_test(out.dataset, wt, out.unit, fast, repeats)
                      / time_test(out.dataset, wt, out.unit, full, repeats))
    return np.array(ratios)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_results_csv(result: ExperimentResult, path):
    rows = [c.row() for c in result.cells]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def qq_points(pvalues):
    """Sorted observed and expected ``-log10 p`` (expected from uniform order statistics)."""
    p = np.sort(np.asarray(pvalues, dtype=float))
    m = p.size
    expected = -np.log10(np.arange(1, m + 1) / (m + 1))
    with np.errstate(divide="ignore"):
        observed = -np.log10(p)
    return observed, expected


def write_qq_csv(result: ExperimentResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "observed_neglog10_p", "expected_neglog10_p"])
        for c in result.cells:
            obs, exp = qq_points(c.pvalues)
            for o, e in zip(obs, exp):
                w.writerow([c.label, repr(float(o)), repr(float(e))])


def write_diagnostics_csv(result: ExperimentResult, path):
    if not result.diagnostics:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(result.diagnostics[0]))
        w.writeheader()
        w.writerows(result.diagnostics)


def type1_cells(unit="gene", lds=("independent", "correlated"), sizes=(10, 50), n=1000,
                drop_causal=False):
    """Null cells over LD modes and SNP counts (SNPs per gene for pathways)."""
    cells = []
    for ld in lds:
        for k in sizes:
            if unit == "gene":
                sc = Scenario(n=n, unit="gene", n_snps=k, n_causal=0, ld=ld, effect_a=0.0,
                              drop_causal=drop_causal)
            else:
                sc = Scenario(n=n, unit="pathway", n_genes=20, snps_per_gene=k, n_causal_genes=0,
                              ld=ld, effect_a=0.0, drop_causal=drop_causal)
            cells.append(Cell(f"{unit}-{ld}-{k}", sc))
    return cells


def power_cells(n_causal=(1, 3, 5), n_snps=(10, 50, 100), effects=EFFECT_SIZES[1:], ld="correlated", n=1000):
    """Gene-based alternative cells over causal counts, SNP counts and effect sizes."""
    return [
        Cell(f"gene-{ld}-{k}snps-{c}causal-a{a:g}",
             Scenario(n=n, unit="gene", n_snps=k, n_causal=c, ld=ld, effect_a=a))
        for k in n_snps for c in n_causal for a in effects if c <= k
    ]
