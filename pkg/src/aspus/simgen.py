"""Synthetic rare-variant survival data.

Genotypes come from two thresholded multivariate-normal haplotypes per
subject, with SNP correlation drawn from a Wishart matrix when LD is wanted.
Survival follows a Cox model with unit-exponential baseline (Weibull shape 1,
scale 1) and uniform censoring on ``(0, tau)``, where ``tau`` is tuned to hit
a target event rate.

Allele thresholds are set so that ``P(Psi > pi_p) = f_p``, i.e. the upper
``f_p`` tail of the standard normal; this gives minor allele frequency
``f_p``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, stats

from .survdata import Gene, GeneMap, Pathway, PathwayMap, SurvivalDataset

PILOT_SIZE = 50_000


@dataclass(frozen=True)
class Scenario:
    """One simulation configuration.

    ``unit="gene"`` simulates a single gene of ``n_snps`` SNPs with ``n_causal``
    causal ones. ``unit="pathway"`` simulates ``n_genes`` genes whose sizes are
    either fixed (``snps_per_gene`` an int) or drawn uniformly from an inclusive
    integer range; ``n_causal_genes`` genes each carry one causal SNP.
    """

    n: int = 1000
    unit: str = "gene"
    n_snps: int = 10
    n_causal: int = 1
    n_genes: int = 20
    snps_per_gene: int | tuple = (2, 20)
    n_causal_genes: int = 5
    ld: str = "independent"
    lambda0_diag: float = 0.8
    effect_a: float = 0.0
    n_covar: int = 2
    covar_beta: float = 0.1
    maf_range: tuple = (0.001, 0.05)
    event_target: float = 0.6
    drop_causal: bool = False
    prevalence: float = 0.05  # recorded only; enters no generative step
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.snps_per_gene, list):
            object.__setattr__(self, "snps_per_gene", tuple(self.snps_per_gene))
        object.__setattr__(self, "maf_range", tuple(self.maf_range))
        if self.unit not in ("gene", "pathway"):
            raise ValueError(f"unit must be 'gene' or 'pathway', got {self.unit!r}")
        if self.ld not in ("independent", "correlated"):
            raise ValueError(f"ld must be 'independent' or 'correlated', got {self.ld!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        lo, hi = self.maf_range
        if not 0 < lo <= hi < 0.5:
            raise ValueError(f"maf_range must satisfy 0 < lo <= hi < 0.5, got {self.maf_range}")
        if not 0 < self.event_target < 1:
            raise ValueError("event_target must be in (0, 1)")
        if self.effect_a < 0:
            raise ValueError("effect_a must be >= 0")
        if self.lambda0_diag <= 0:
            raise ValueError("lambda0_diag must be > 0")
        if self.unit == "gene":
            if not 0 <= self.n_causal <= self.n_snps:
                raise ValueError("need 0 <= n_causal <= n_snps")
        else:
            if not 0 <= self.n_causal_genes <= self.n_genes:
                raise ValueError("need 0 <= n_causal_genes <= n_genes")
            lo_k = self.snps_per_gene if np.isscalar(self.snps_per_gene) else min(self.snps_per_gene)
            if lo_k < 1 or (self.drop_causal and lo_k < 2):
                raise ValueError("genes need at least one SNP left after dropping causal ones")

    @property
    def n_causal_snps(self) -> int:
        return self.n_causal if self.unit == "gene" else self.n_causal_genes

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass(eq=False)
class SimTruth:
    causal: np.ndarray  # column indices in the generated (pre-drop) matrix
    beta_snp: np.ndarray  # effect of every generated SNP
    beta_covar: np.ndarray
    event_rate: float
    tau: float
    dropped: np.ndarray  # generated columns removed from the observed matrix
    snp_ids: tuple = ()  # ids of all generated SNPs
    gene_sizes: tuple = ()


@dataclass(eq=False)
class SimOutput:
    dataset: SurvivalDataset
    truth: SimTruth
    genemap: GeneMap
    pathwaymap: PathwayMap | None = None
    scenario: Scenario = field(default_factory=Scenario)

    @property
    def unit(self):
        """The simulated test unit: the single gene, or the pathway."""
        if self.pathwaymap is not None:
            return next(iter(self.pathwaymap))
        return next(iter(self.genemap))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _to_correlation(cov):
    d = np.sqrt(np.diag(cov))
    phi = cov / np.outer(d, d)
    phi = 0.5 * (phi + phi.T)
    np.fill_diagonal(phi, 1.0)
    return phi


def _clip_psd(phi, floor=1e-10):
    w, v = np.linalg.eigh(phi)
    if w.min() >= floor:
        return phi
    fixed = (v * np.maximum(w, floor)) @ v.T
    return _to_correlation(fixed)


def sample_wishart(df, scale, rng):
    """Wishart draw by the Bartlett decomposition."""
    p = scale.shape[0]
    if df < p:
        raise ValueError(f"Wishart needs df >= dimension ({df} < {p})")
    chol = np.linalg.cholesky(scale)
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    lower = np.tril_indices(p, -1)
    a[lower] = rng.standard_normal(len(lower[0]))
    la = chol @ a
    return la @ la.T


def sample_ld_correlation(P, lambda0_diag, rng, independent=False):
    """SNP correlation ``Cor(Lambda)`` with ``Lambda ~ Wishart(P, lambda0_diag * I)``.

    ``independent=True`` returns the identity and draws nothing.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    if lambda0_diag <= 0:
        raise ValueError("lambda0_diag must be > 0")
    if independent:
        return np.eye(P)
    lam = sample_wishart(P, lambda0_diag * np.eye(P), rng)
    return _clip_psd(_to_correlation(lam))


def allele_thresholds(mafs):
    """Normal thresholds with upper-tail probability equal to each MAF."""
    return stats.norm.isf(np.asarray(mafs, dtype=float))


def _factor(phi):
    try:
        return np.linalg.cholesky(phi)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(phi)
        return v * np.sqrt(np.maximum(w, 0.0))


def sample_genotypes(n, phi, mafs, rng):
    """``n x P`` dosages: per subject, two ``N(0, phi)`` haplotypes thresholded per SNP."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    p = phi.shape[0]
    if np.allclose(phi, np.eye(p)):
        psi = rng.standard_normal((2, n, p))
    else:
        psi = rng.standard_normal((2, n, p)) @ _factor(phi).T
    t = allele_thresholds(mafs)
    return (psi[0] > t).astype(float) + (psi[1] > t)


def sample_effects(n_snps, causal, a, n_covar, covar_beta, rng):
    """SNP effects ``Uniform(0.5a, 1.5a)`` with a fair random sign on causal SNPs, 0 elsewhere."""
    causal = np.asarray(causal, dtype=np.intp)
    if a < 0:
        raise ValueError("effect size a must be >= 0")
    beta = np.zeros(n_snps)
    mag = rng.uniform(0.5 * a, 1.5 * a, size=causal.size)
    sign = rng.choice((-1.0, 1.0), size=causal.size)
    beta[causal] = mag * sign
    return beta, np.full(n_covar, float(covar_beta))


def sample_survival(eta, rng, tau=None):
    """Event times ``T = E * exp(-eta)`` with ``E ~ Exp(1)``.

    Without ``tau`` only ``T`` is returned; with it, censoring ``C ~ Uniform(0, tau)``
    is applied and ``(T, X, delta)`` returned.
    """
    eta = np.asarray(eta, dtype=float)
    t = rng.standard_exponential(eta.shape) * np.exp(-eta)
    if tau is None:
        return t
    c = rng.uniform(0.0, tau, size=eta.shape)
    return t, np.minimum(t, c), (t <= c).astype(float)


def expected_event_rate(times, tau):
    """Event rate ``mean P(T <= C)`` for ``C ~ Uniform(0, tau)``, integrating ``C`` exactly."""
    return float(np.mean(np.clip(1.0 - np.asarray(times) / tau, 0.0, 1.0)))


def tau_for_times(times, target, rtol=1e-10):
    """Solve ``expected_event_rate(times, tau) = target`` for ``tau``."""
    if not 0 < target < 1:
        raise ValueError(f"event target {target} unattainable; achievable rates lie in (0, 1)")
    times = np.asarray(times, dtype=float)
    f = lambda tau: expected_event_rate(times, tau) - target  # noqa: E731
    lo = hi = float(np.median(times))
    while f(lo) > 0:
        lo /= 2
    while f(hi) < 0:
        hi *= 2
    return optimize.brentq(f, lo, hi, rtol=rtol)


def _pilot_times(scenario, beta_snp, beta_covar, blocks, mafs, rng, size):
    eta = np.zeros(size)
    causal = np.flatnonzero(beta_snp)
    for cols, phi in blocks:
        sel = np.intersect1d(cols, causal)
        if sel.size == 0:
            continue
        local = np.searchsorted(cols, sel)
        z = sample_genotypes(size, phi[np.ix_(local, local)], mafs[sel], rng)
        eta += z @ beta_snp[sel]
    if beta_covar.size and np.any(beta_covar):
        eta += rng.standard_normal((size, beta_covar.size)) @ beta_covar
    return sample_survival(eta, rng)


def calibrate_tau(scenario, rng, *, beta_snp=None, beta_covar=None, blocks=None, mafs=None,
                  pilot_size=PILOT_SIZE):
    """Censoring bound giving the scenario's target event rate.

    A pilot sample of event times is drawn under the scenario's genotype and
    effect distributions (only causal SNPs matter), and the event rate as a
    function of ``tau`` is solved exactly over that sample. Pass the
    replicate's own ``beta_snp``/``blocks``/``mafs`` to calibrate for them.
    """
    if not 0 < scenario.event_target < 1:
        raise ValueError(
            f"event target {scenario.event_target} unattainable; achievable rates lie in (0, 1)"
        )
    if beta_snp is None:
        layout = _layout(scenario, rng)
        blocks, mafs = _blocks(scenario, layout, rng)
        beta_snp, beta_covar = sample_effects(
            layout.n_total, layout.causal, scenario.effect_a, scenario.n_covar, scenario.covar_beta, rng
        )
    if beta_covar is None:
        beta_covar = np.full(scenario.n_covar, float(scenario.covar_beta))
    times = _pilot_times(scenario, beta_snp, beta_covar, blocks or [], mafs, rng, pilot_size)
    return tau_for_times(times, scenario.event_target)


# ---------------------------------------------------------------------------
# full scenario
# ---------------------------------------------------------------------------

@dataclass
class _Layout:
    sizes: np.ndarray
    causal: np.ndarray

    @property
    def n_total(self):
        return int(self.sizes.sum())

    @property
    def starts(self):
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]])


def _layout(s: Scenario, rng):
    if s.unit == "gene":
        sizes = np.array([s.n_snps])
        causal = np.sort(rng.choice(s.n_snps, size=s.n_causal, replace=False))
        return _Layout(sizes, causal)
    if np.isscalar(s.snps_per_gene):
        sizes = np.full(s.n_genes, int(s.snps_per_gene))
    else:
        lo, hi = s.snps_per_gene
        sizes = rng.integers(lo, hi, size=s.n_genes, endpoint=True)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    genes = np.sort(rng.choice(s.n_genes, size=s.n_causal_genes, replace=False))
    causal = np.array([starts[g] + rng.integers(sizes[g]) for g in genes], dtype=np.intp)
    return _Layout(sizes, causal)


def _blocks(s: Scenario, layout: _Layout, rng):
    # one LD block per gene
    lo, hi = s.maf_range
    mafs = rng.uniform(lo, hi, size=layout.n_total)
    blocks = []
    for start, k in zip(layout.starts, layout.sizes):
        cols = np.arange(start, start + k)
        phi = sample_ld_correlation(int(k), s.lambda0_diag, rng, independent=s.ld == "independent")
        blocks.append((cols, phi))
    return blocks, mafs


def build_scenario(scenario: Scenario) -> SimOutput:
    """Simulate one replicate of ``scenario`` (deterministic in ``scenario.seed``)."""
    s = scenario
    rng = np.random.default_rng(np.random.SeedSequence(s.seed))
    layout = _layout(s, rng)
    blocks, mafs = _blocks(s, layout, rng)
    geno = np.empty((s.n, layout.n_total))
    for cols, phi in blocks:
        geno[:, cols] = sample_genotypes(s.n, phi, mafs[cols], rng)
    covar = rng.standard_normal((s.n, s.n_covar))
    beta_snp, beta_covar = sample_effects(
        layout.n_total, layout.causal, s.effect_a, s.n_covar, s.covar_beta, rng
    )
    tau = calibrate_tau(s, rng, beta_snp=beta_snp, beta_covar=beta_covar, blocks=blocks, mafs=mafs)
    eta = geno @ beta_snp + covar @ beta_covar
    _, x, delta = sample_survival(eta, rng, tau)

    snp_ids = tuple(f"snp{j + 1}" for j in range(layout.n_total))
    gene_of = np.repeat(np.arange(layout.sizes.size), layout.sizes)
    keep = np.ones(layout.n_total, dtype=bool)
    dropped = np.array([], dtype=np.intp)
    if s.drop_causal and layout.causal.size:
        dropped = layout.causal.copy()
        keep[dropped] = False
    new_index = np.cumsum(keep) - 1

    gene_ids = ["gene1"] if s.unit == "gene" else [f"gene{g + 1}" for g in range(layout.sizes.size)]
    genes = {}
    for g, gid in enumerate(gene_ids):
        cols = np.flatnonzero((gene_of == g) & keep)
        genes[gid] = Gene(gid, new_index[cols], np.ones(cols.size))
    genemap = GeneMap(genes, int(keep.sum()))
    pathwaymap = None
    if s.unit == "pathway":
        pathwaymap = PathwayMap(
            {"pathway1": Pathway("pathway1", gene_ids, np.ones(len(gene_ids)))}, genemap
        )

    dataset = SurvivalDataset(
        subject_ids=[f"id{i + 1}" for i in range(s.n)],
        geno=geno[:, keep],
        covar=covar,
        time=x,
        status=delta,
        snp_ids=[sid for sid, k in zip(snp_ids, keep) if k],
        covar_ids=[f"cov{k + 1}" for k in range(s.n_covar)],
    )
    truth = SimTruth(
        causal=layout.causal,
        beta_snp=beta_snp,
        beta_covar=beta_covar,
        event_rate=float(delta.mean()),
        tau=tau,
        dropped=dropped,
        snp_ids=snp_ids,
        gene_sizes=tuple(int(k) for k in layout.sizes),
    )
    return SimOutput(dataset, truth, genemap, pathwaymap, s)


def write_truth(truth: SimTruth, path):
    """``truth.csv``: ``snp_id,true_beta,causal,dropped`` for every generated SNP."""
    causal = set(truth.causal.tolist())
    dropped = set(truth.dropped.tolist())
    with open(path, "w") as fh:
        fh.write("snp_id,true_beta,causal,dropped\n")
        for j, sid in enumerate(truth.snp_ids):
            fh.write(f"{sid},{float(truth.beta_snp[j])!r},{int(j in causal)},{int(j in dropped)}\n")
