"""Adaptive sum-of-powered-score tests for genes and pathways.

Each test unit (a gene or a pathway) is scored on the observed data and on
``B`` row-index permutations of its genotypes. For every exponent (or exponent
pair for pathways) the observed and permuted statistics are ranked into
empirical p-values, the minimum over exponents is taken per permutation, and
the adaptive p-value counts how many permutations are at least as extreme.

Permutations are drawn from a counter-style stream: permutation ``b`` of unit
``u`` uses its own generator seeded by ``(seed, key(u), b)``. Results therefore
do not depend on scan order, batching or worker count, and the two-stage
(early stopping) run reuses exactly the first ``B_init`` permutations of the
full run.
"""
from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .score_engine import WeightTable, permuted_scores
from .survdata import Gene, GeneMap, Pathway, PathwayMap, SurvivalDataset

INF = math.inf
# relative slack when comparing statistics, so summation-order rounding is not a rank
TIE_RTOL = 1e-12
# permutation scores are formed in blocks of at most this many residual entries
_BLOCK_ENTRIES = 8192


def _check_exponents(values, allow_inf, what):
    values = tuple(float(v) for v in values)
    if not values:
        raise ValueError(f"{what}: empty exponent list")
    if any(v < 1 or math.isnan(v) for v in values):
        raise ValueError(f"{what}: exponents must be >= 1")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{what}: exponents must be strictly increasing")
    if not allow_inf and math.isinf(values[-1]):
        raise ValueError(f"{what}: infinite exponent not allowed here")
    return values


@dataclass(frozen=True)
class GammaGrid:
    """SNP-level exponents ``gammas`` and, for pathway tests, gene-level ``gene_gammas``."""

    gammas: tuple = (1, 2, 4, 8, INF)
    gene_gammas: tuple = (1, 2, 4, 8)

    def __post_init__(self):
        object.__setattr__(self, "gammas", _check_exponents(self.gammas, True, "gammas"))
        object.__setattr__(self, "gene_gammas", _check_exponents(self.gene_gammas, False, "gene_gammas"))

    @classmethod
    def gene(cls, gammas=(1, 2, 4, 8, INF)):
        return cls(gammas)

    @classmethod
    def pathway(cls, gammas=(1, 2, 4, 8), gene_gammas=(1, 2, 4, 8)):
        return cls(gammas, gene_gammas)

    def labels(self, unit_type):
        if unit_type == "gene":
            return [_glabel(g) for g in self.gammas]
        return [f"{_glabel(g)}_{_glabel(h)}" for g in self.gammas for h in self.gene_gammas]


def _glabel(g):
    return "inf" if math.isinf(g) else f"{g:g}"


@dataclass(frozen=True)
class PermPlan:
    """Permutation budget: ``B_init`` first, up to ``B`` if the interim p-value is below ``theta``."""

    B: int = 500
    B_init: int = 40
    theta: float = 0.1
    seed: int = 0
    plus_one: bool = False
    as_printed: bool = False

    def __post_init__(self):
        if not 1 <= self.B_init <= self.B:
            raise ValueError(f"need 1 <= B_init <= B, got B_init={self.B_init}, B={self.B}")
        if not 0 < self.theta <= 1:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")


@dataclass(eq=False)
class SpuResult:
    unit_id: str
    unit_type: str
    n_snps: int
    labels: list
    stats: np.ndarray  # observed statistic per exponent combination
    pvalues: np.ndarray  # observed empirical p-value per exponent combination
    p_min: float
    p_aspus: float
    perms_used: int
    early_stopped: bool
    perm_stats: np.ndarray = field(repr=False, default=None)  # (perms_used + 1) x combos

    def row(self) -> dict:
        out = {
            "unit_id": self.unit_id,
            "unit_type": self.unit_type,
            "n_snps": self.n_snps,
            "p_aspus": self.p_aspus,
            "perms_used": self.perms_used,
            "early_stopped": int(self.early_stopped),
        }
        out.update({f"p_spu_{lab}": p for lab, p in zip(self.labels, self.pvalues)})
        return out


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def _powered_norms(x, gammas):
    """``(sum_j x_j^g)^(1/g)`` along the last axis for each g; max for g = inf."""
    x = np.atleast_2d(x)
    top = x.max(axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    y = x / safe
    out = np.empty((x.shape[0], len(gammas)))
    for c, g in enumerate(gammas):
        if math.isinf(g):
            out[:, c] = top[:, 0]
        elif g == 1:
            out[:, c] = x.sum(axis=-1)
        else:
            out[:, c] = safe[:, 0] * np.sum(y ** g, axis=-1) ** (1.0 / g)
    return out


def spu_gene_stat(u, weights=None, gamma=1):
    """SPU statistic of a gene: ``(sum_j (v_j |U_j|)^gamma)^(1/gamma)``, ``max_j v_j |U_j|`` at infinity.

    ``u`` may be a single score vector or a stack of them (rows).
    """
    u = np.asarray(u, dtype=float)
    x = np.abs(u) if weights is None else np.asarray(weights, dtype=float) * np.abs(u)
    res = _powered_norms(x, (float(gamma),))[:, 0]
    return float(res[0]) if u.ndim == 1 else res


class _PathwayLayout:
    """Concatenated SNP columns of a pathway with per-gene segment boundaries."""

    def __init__(self, pathway: Pathway, genemap: GeneMap):
        genes = [genemap[g] for g in pathway.genes]
        self.cols = np.concatenate([g.snps for g in genes])
        self.v = np.concatenate([g.weights for g in genes])
        self.k = np.array([g.k for g in genes], dtype=float)
        if (self.k == 0).any():
            raise ValueError(f"pathway {pathway.pathway_id} contains an empty gene")
        self.starts = np.concatenate([[0], np.cumsum(self.k[:-1])]).astype(np.intp)
        self.q = np.asarray(pathway.weights, dtype=float)

    def stats(self, u, gammas, gene_gammas):
        """Statistics for scores ``u`` given in layout column order (``u[..., j]`` is SNP ``cols[j]``)."""
        x = self.v * np.abs(np.atleast_2d(u))
        top = x.max(axis=-1, keepdims=True)
        safe = np.where(top > 0, top, 1.0)
        y = x / safe
        out = np.empty((x.shape[0], len(gammas) * len(gene_gammas)))
        c = 0
        for g in gammas:
            inner = np.add.reduceat(y ** g, self.starts, axis=-1) / self.k
            gene_level = self.q * safe * inner ** (1.0 / g)
            for h in gene_gammas:
                out[:, c] = np.sum(gene_level ** h, axis=-1)
                c += 1
        return out


def spu_pathway_stat(u, genes, v=None, q=None, gamma=1, gamma_G=1):
    """Pathway statistic ``sum_g (q_g (sum_{s in g} (v_s |U_s|)^gamma / k_g)^(1/gamma))^gamma_G``.

    ``genes`` lists, per gene, the indices of its SNPs within ``u``; ``k_g`` is
    the length of each list.
    """
    u = np.asarray(u, dtype=float)
    if math.isinf(gamma) or math.isinf(gamma_G):
        raise ValueError("pathway exponents must be finite")
    sizes = [len(g) for g in genes]
    if min(sizes) == 0:
        raise ValueError("every gene needs at least one SNP")
    v = np.ones(u.shape[-1]) if v is None else np.asarray(v, dtype=float)
    q = np.ones(len(genes)) if q is None else np.asarray(q, dtype=float)
    pw = Pathway("_", [str(i) for i in range(len(genes))], q)
    gm = GeneMap({str(i): Gene(str(i), g, v[list(g)]) for i, g in enumerate(genes)}, u.shape[-1])
    layout = _PathwayLayout(pw, gm)
    res = layout.stats(u[..., layout.cols], (gamma,), (gamma_G,))[:, 0]
    return float(res[0]) if u.ndim == 1 else res


# ---------------------------------------------------------------------------
# p-values
# ---------------------------------------------------------------------------

def empirical_pvalues(stats):
    """Self-inclusive permutation p-values for every row.

    ``stats`` is ``(B + 1) x C`` (row 0 observed). Returns ``p`` of the same
    shape, ``p[b, c] = #{b' : stats[b', c] >= stats[b, c]} / (B + 1)``, and
    ``p_min[b] = min_c p[b, c]``. Values within ``TIE_RTOL`` count as ties.
    """
    stats = np.asarray(stats, dtype=float)
    if stats.ndim == 1:
        stats = stats[:, None]
    m = stats.shape[0]
    if m < 2:
        raise ValueError("need the observed statistic and at least one permutation")
    srt = np.sort(stats, axis=0)
    p = np.empty_like(stats)
    for c in range(stats.shape[1]):
        thresh = stats[:, c] - TIE_RTOL * np.abs(stats[:, c])
        p[:, c] = m - np.searchsorted(srt[:, c], thresh, side="left")
    p /= m
    return p, p.min(axis=1)


def aspus_pvalue(p_min_obs, p_min_perm, plus_one=False, as_printed=False):
    """Adaptive p-value ``sum_{b>=1} I(p_min^b <= p_min^0) / (B + 1)``.

    Small values mean few permutations reach the observed minimum p-value.
    ``plus_one`` adds the observed term to the count, so the result is never 0.
    ``as_printed`` flips the indicator to ``I(p_min^0 <= p_min^b)``, which
    counts permutations that are *less* extreme than the data; it is kept only
    for reference and has no power against alternatives.
    """
    p_min_perm = np.asarray(p_min_perm, dtype=float)
    if as_printed:
        count = np.count_nonzero(p_min_obs <= p_min_perm)
    else:
        count = np.count_nonzero(p_min_perm <= p_min_obs)
    return (count + int(bool(plus_one))) / (p_min_perm.size + 1)


# ---------------------------------------------------------------------------
# adaptive test
# ---------------------------------------------------------------------------

def unit_key(unit_id) -> int:
    """Stable 64-bit key for a unit id, used to derive its permutation stream."""
    return int.from_bytes(hashlib.blake2b(str(unit_id).encode(), digest_size=8).digest(), "little")


def permutation(n, seed, key, b) -> np.ndarray:
    """Permutation ``b`` (1-based) of the stream ``(seed, key)``; Fisher-Yates over row indices."""
    ss = np.random.SeedSequence(seed, spawn_key=(key, b))
    return np.random.Generator(np.random.PCG64(ss)).permutation(n)


def _block_size(n):
    return max(1, min(64, _BLOCK_ENTRIES // max(n, 1)))


class _Unit:
    def __init__(self, unit, grid, genemap, geno):
        if isinstance(unit, Gene):
            self.id, self.type = unit.gene_id, "gene"
            self.labels = grid.labels("gene")
            cols, self.v = unit.snps, np.asarray(unit.weights, dtype=float)
            self._layout = None
        elif isinstance(unit, Pathway):
            if genemap is None:
                raise ValueError("pathway tests need the gene map")
            if any(math.isinf(g) for g in grid.gammas):
                raise ValueError("pathway tests need finite SNP-level exponents")
            self.id, self.type = unit.pathway_id, "pathway"
            self.labels = grid.labels("pathway")
            self._layout = _PathwayLayout(unit, genemap)
            cols = self._layout.cols
        else:
            raise TypeError(f"unit must be a Gene or Pathway, got {type(unit).__name__}")
        self.grid = grid
        self.n_snps = int(np.asarray(cols).size)
        self.geno = _columns(geno, np.asarray(cols))

    def stats(self, u):
        if self._layout is None:
            return _powered_norms(self.v * np.abs(u), self.grid.gammas)
        # self.geno holds the layout columns, so scores arrive in layout order
        return self._layout.stats(u, self.grid.gammas, self.grid.gene_gammas)


def _columns(geno, cols):
    """Genotype columns of a unit; a contiguous ascending range is returned as a view."""
    if cols.size and np.array_equal(cols, np.arange(cols[0], cols[0] + cols.size)):
        return geno[:, cols[0]:cols[0] + cols.size]
    return geno[:, cols]


def _fill(stats, unit, residual, seed, key, start, stop):
    n = residual.size
    blk = _block_size(n)
    for s in range(start, stop + 1, blk):
        e = min(s + blk, stop + 1)
        perms = np.stack([permutation(n, seed, key, b) for b in range(s, e)])
        stats[s:e] = unit.stats(permuted_scores(residual, unit.geno, perms))


def _summarise(unit, stats, plan, early):
    p, p_min = empirical_pvalues(stats)
    return SpuResult(
        unit_id=unit.id,
        unit_type=unit.type,
        n_snps=unit.n_snps,
        labels=unit.labels,
        stats=stats[0].copy(),
        pvalues=p[0],
        p_min=float(p_min[0]),
        p_aspus=aspus_pvalue(p_min[0], p_min[1:], plan.plus_one, plan.as_printed),
        perms_used=stats.shape[0] - 1,
        early_stopped=early,
        perm_stats=stats,
    )


def run_adaptive_test(dataset: SurvivalDataset, wt: WeightTable, unit, grid=None, plan=None,
                      genemap=None) -> SpuResult:
    """Two-stage permutation test of one gene or pathway.

    The first ``plan.B_init`` permutations give an interim adaptive p-value. If
    it is at least ``plan.theta`` the unit stops there; otherwise the remaining
    permutations are added to reach ``plan.B``. Both stages draw from the same
    per-unit stream, so a unit that continues gets exactly the full-``B`` result.
    """
    plan = plan or PermPlan()
    if grid is None:
        grid = GammaGrid.gene() if isinstance(unit, Gene) else GammaGrid.pathway()
    if wt.n != dataset.n:
        raise ValueError("weight table does not match the dataset")
    u = _Unit(unit, grid, genemap, dataset.geno)
    key = unit_key(u.id)
    r = wt.residual

    stats = np.empty((plan.B + 1, len(u.labels)))
    stats[0] = u.stats((r @ u.geno)[None, :])[0]
    _fill(stats, u, r, plan.seed, key, 1, plan.B_init)
    if plan.B_init == plan.B:
        return _summarise(u, stats, plan, early=False)

    _, p_min = empirical_pvalues(stats[: plan.B_init + 1])
    interim = aspus_pvalue(p_min[0], p_min[1:], plan.plus_one, plan.as_printed)
    if interim >= plan.theta:
        return _summarise(u, stats[: plan.B_init + 1], plan, early=True)
    _fill(stats, u, r, plan.seed, key, plan.B_init + 1, plan.B)
    return _summarise(u, stats, plan, early=False)


def _run_one(args):
    dataset, wt, unit, grid, plan, genemap = args
    return run_adaptive_test(dataset, wt, unit, grid, plan, genemap)


def scan(dataset: SurvivalDataset, wt: WeightTable, units, grid=None, plan=None, workers=1):
    """Test every gene of a ``GeneMap`` or every pathway of a ``PathwayMap``.

    Results come back in map order whatever the number of workers.
    """
    if isinstance(units, PathwayMap):
        genemap, items = units.genemap, list(units)
    elif isinstance(units, GeneMap):
        genemap, items = None, list(units)
    else:
        genemap, items = None, list(units)
    tasks = [(dataset, wt, u, grid, plan, genemap) for u in items]
    if workers <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def write_results(results, path):
    """Results CSV: ``unit_id,unit_type,n_snps,p_aspus,perms_used,early_stopped,p_spu_<label>...``."""
    rows = [r.row() for r in results]
    header = ["unit_id", "unit_type", "n_snps", "p_aspus", "perms_used", "early_stopped"]
    for r in rows:
        header += [k for k in r if k not in header]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, restval="")
        w.writeheader()
        w.writerows(rows)
