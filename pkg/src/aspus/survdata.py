"""Survival datasets, gene maps and pathway maps, plus their CSV readers/writers.

File layouts::

    geno.csv      subject_id,<snp_id>,...       decimal dosages in [0, 2]
    pheno.csv     subject_id,time,status        time > 0, status in {0, 1}
    covar.csv     subject_id,<covar_id>,...     real values
    genemap.csv   snp_id,gene_id[,weight]
    pathway.csv   gene_id,pathway_id[,weight]
"""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Base class for malformed input data."""


class AlignmentError(DataError):
    """Subjects do not line up across the genotype, phenotype and covariate files."""


class ValidationError(DataError):
    """A value violates the data model (dosage range, time sign, status code...)."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Aligned genotypes, covariates and right-censored outcomes for ``n`` subjects.

    Arrays are copied on construction and made read-only.
    """

    subject_ids: Sequence[str]
    geno: np.ndarray
    covar: np.ndarray
    time: np.ndarray
    status: np.ndarray
    snp_ids: Sequence[str]
    covar_ids: Sequence[str] = ()

    def __post_init__(self):
        geno = _frozen(self.geno)
        time = _frozen(self.time).ravel()
        n = time.shape[0]
        if geno.ndim == 1:
            geno = _frozen(geno.reshape(n, -1))
        covar = np.asarray(self.covar, dtype=float)
        if covar.size == 0:
            covar = np.zeros((n, 0))
        covar = _frozen(covar.reshape(n, -1) if covar.ndim == 1 else covar)
        status = _frozen(self.status).ravel()
        object.__setattr__(self, "geno", geno)
        object.__setattr__(self, "covar", covar)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "snp_ids", tuple(str(s) for s in self.snp_ids))
        object.__setattr__(self, "covar_ids", tuple(str(s) for s in self.covar_ids))
        self._validate()

    def _validate(self):
        n = self.n
        if len(self.subject_ids) != n:
            raise ValidationError(f"{len(self.subject_ids)} subject ids for {n} subjects")
        if len(set(self.subject_ids)) != n:
            raise ValidationError("duplicate subject ids")
        if self.geno.shape[0] != n or self.covar.shape[0] != n or self.status.shape[0] != n:
            raise ValidationError(
                f"row counts differ: geno {self.geno.shape[0]}, covar {self.covar.shape[0]}, "
                f"time {n}, status {self.status.shape[0]}"
            )
        if len(self.snp_ids) != self.geno.shape[1]:
            raise ValidationError("snp_ids length does not match genotype columns")
        if len(self.covar_ids) != self.covar.shape[1]:
            raise ValidationError("covar_ids length does not match covariate columns")
        bad = ~np.isfinite(self.geno) | (self.geno < 0) | (self.geno > 2)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"dosage {self.geno[i, j]!r} outside [0, 2] for subject "
                f"{self.subject_ids[i]} (row {i}), snp {self.snp_ids[j]} (column {j})"
            )
        if not np.isfinite(self.covar).all():
            i, j = np.argwhere(~np.isfinite(self.covar))[0]
            raise ValidationError(
                f"non-finite covariate for subject {self.subject_ids[i]}, {self.covar_ids[j]}"
            )
        bad_t = ~np.isfinite(self.time) | (self.time <= 0)
        if bad_t.any():
            i = int(np.flatnonzero(bad_t)[0])
            raise ValidationError(
                f"non-positive or non-finite time {self.time[i]!r} for subject {self.subject_ids[i]}"
            )
        bad_s = (self.status != 0) & (self.status != 1)
        if bad_s.any():
            i = int(np.flatnonzero(bad_s)[0])
            raise ValidationError(f"status {self.status[i]!r} not in {{0, 1}} for subject {self.subject_ids[i]}")

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n_snps(self) -> int:
        return self.geno.shape[1]

    @property
    def n_covar(self) -> int:
        return self.covar.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    def with_geno(self, geno, snp_ids=None) -> "SurvivalDataset":
        """Copy of the dataset with a different genotype matrix."""
        return SurvivalDataset(
            self.subject_ids, geno, self.covar, self.time, self.status,
            self.snp_ids if snp_ids is None else snp_ids, self.covar_ids,
        )


@dataclass(frozen=True, eq=False)
class Gene:
    gene_id: str
    snps: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "snps", _frozen(self.snps, dtype=np.intp))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if len(set(self.snps.tolist())) != self.snps.size:
            raise ValidationError(f"gene {self.gene_id} lists the same SNP twice")
        if self.snps.size != self.weights.size:
            raise ValidationError(f"gene {self.gene_id}: one weight per SNP required")
        if (self.weights < 0).any() or not np.isfinite(self.weights).all():
            raise ValidationError(f"gene {self.gene_id}: SNP weights must be finite and >= 0")

    @property
    def k(self) -> int:
        return self.snps.size


@dataclass(frozen=True, eq=False)
class GeneMap:
    """Genes keyed by id, each an ordered list of genotype column indices.

    ``dropped`` holds genes with no resolvable SNP, ``unknown_snps`` the SNP ids
    that did not match any genotype column.
    """

    genes: dict
    n_snps: int
    dropped: tuple = ()
    unknown_snps: tuple = ()

    def __post_init__(self):
        for g in self.genes.values():
            if g.k == 0:
                raise ValidationError(f"gene {g.gene_id} has no SNPs")
            if g.snps.max() >= self.n_snps or g.snps.min() < 0:
                raise ValidationError(f"gene {g.gene_id} references a column outside 0..{self.n_snps - 1}")

    def __getitem__(self, gene_id) -> Gene:
        return self.genes[gene_id]

    def __iter__(self):
        return iter(self.genes.values())

    def __len__(self):
        return len(self.genes)

    @classmethod
    def from_dict(cls, mapping, n_snps, weights=None) -> "GeneMap":
        """Build from ``{gene_id: [column, ...]}`` with optional ``{gene_id: [weight, ...]}``."""
        weights = weights or {}
        genes = {
            str(g): Gene(str(g), cols, weights.get(g, np.ones(len(cols))))
            for g, cols in mapping.items()
        }
        return cls(genes, n_snps)


@dataclass(frozen=True, eq=False)
class Pathway:
    pathway_id: str
    genes: tuple
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if len(self.genes) == 0:
            raise ValidationError(f"pathway {self.pathway_id} has no genes")
        if len(self.genes) != self.weights.size:
            raise ValidationError(f"pathway {self.pathway_id}: one weight per gene required")
        if (self.weights < 0).any() or not np.isfinite(self.weights).all():
            raise ValidationError(f"pathway {self.pathway_id}: gene weights must be finite and >= 0")


@dataclass(frozen=True, eq=False)
class PathwayMap:
    pathways: dict
    genemap: GeneMap
    dropped: tuple = ()
    missing_genes: tuple = ()

    def __post_init__(self):
        for p in self.pathways.values():
            for g in p.genes:
                if g not in self.genemap.genes:
                    raise ValidationError(f"pathway {p.pathway_id}: gene {g} not in gene map")

    def __getitem__(self, pathway_id) -> Pathway:
        return self.pathways[pathway_id]

    def __iter__(self):
        return iter(self.pathways.values())

    def __len__(self):
        return len(self.pathways)

    def gene_sizes(self, pathway_id) -> np.ndarray:
        """SNP count ``k_g`` for each gene of the pathway, in pathway order."""
        return np.array([self.genemap[g].k for g in self.pathways[pathway_id].genes])


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------

def _read_table(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    df = pd.read_csv(path, dtype={"subject_id": str}, float_precision="round_trip")
    if df.columns.size == 0 or df.columns[0] != "subject_id":
        raise DataError(f"{what} file {path}: first column must be 'subject_id'")
    if df["subject_id"].isna().any():
        raise ValidationError(f"{what} file {path}: empty subject_id")
    dup = df["subject_id"][df["subject_id"].duplicated()]
    if len(dup):
        raise ValidationError(f"{what} file {path}: duplicate subject ids {sorted(set(dup))}")
    return df.set_index("subject_id")


def _numeric(df, what):
    try:
        values = df.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{what}: non-numeric value ({exc})") from None
    missing = np.isnan(values)
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise ValidationError(
            f"{what}: missing value for subject {df.index[i]}, column {df.columns[j]}"
        )
    return values


def load_dataset(geno_path, pheno_path, covar_path=None) -> SurvivalDataset:
    """Read and align the three subject-keyed CSV files.

    Rows are ordered as in the phenotype file. Every subject must appear in every
    file; ``covar_path=None`` gives a dataset without covariates.
    """
    pheno = _read_table(pheno_path, "phenotype")
    geno = _read_table(geno_path, "genotype")
    covar = _read_table(covar_path, "covariate") if covar_path is not None else None

    missing_cols = {"time", "status"} - set(pheno.columns)
    if missing_cols:
        raise DataError(f"phenotype file lacks columns {sorted(missing_cols)}")

    ids = list(pheno.index)
    tables = {"genotype": geno} if covar is None else {"genotype": geno, "covariate": covar}
    problems = []
    for name, df in tables.items():
        absent = [s for s in ids if s not in df.index]
        extra = [s for s in df.index if s not in pheno.index]
        if absent:
            problems.append(f"missing from {name} file: {absent}")
        if extra:
            problems.append(f"missing from phenotype file (present in {name}): {extra}")
    if problems:
        raise AlignmentError("; ".join(problems))

    g = geno.loc[ids]
    ph = _numeric(pheno.loc[ids, ["time", "status"]], "phenotype")
    if covar is None:
        cv, cv_ids = np.zeros((len(ids), 0)), ()
    else:
        cv, cv_ids = _numeric(covar.loc[ids], "covariate"), tuple(covar.columns)
    return SurvivalDataset(
        subject_ids=ids,
        geno=_numeric(g, "genotype"),
        covar=cv,
        time=ph[:, 0],
        status=ph[:, 1],
        snp_ids=tuple(g.columns),
        covar_ids=cv_ids,
    )


def _read_membership(path, key, group, what):
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    cols = list(df.columns)
    if cols[:2] != [key, group] or len(cols) > 3:
        raise DataError(f"{what} file {path}: expected header {key},{group}[,weight], got {cols}")
    weights = np.ones(len(df))
    if len(cols) == 3:
        raw = df.iloc[:, 2].str.strip()
        filled = raw != ""
        try:
            weights[filled.to_numpy()] = raw[filled].astype(float).to_numpy()
        except ValueError as exc:
            raise ValidationError(f"{what} file {path}: bad weight ({exc})") from None
        if (weights < 0).any():
            i = int(np.flatnonzero(weights < 0)[0])
            raise ValidationError(
                f"{what} file {path}: negative weight {weights[i]} for {df.iloc[i, 0]} in {df.iloc[i, 1]}"
            )
    return df.iloc[:, 0].tolist(), df.iloc[:, 1].tolist(), weights


def load_genemap(path, dataset: SurvivalDataset) -> GeneMap:
    """Read ``snp_id,gene_id[,weight]``; a SNP may belong to several genes."""
    snps, genes, weights = _read_membership(path, "snp_id", "gene_id", "gene map")
    col = {s: j for j, s in enumerate(dataset.snp_ids)}
    members: dict = {}
    unknown = []
    for s, g, w in zip(snps, genes, weights):
        members.setdefault(g, ([], []))
        if s not in col:
            unknown.append(s)
            continue
        members[g][0].append(col[s])
        members[g][1].append(w)
    dropped = tuple(g for g, (c, _) in members.items() if not c)
    if dropped:
        warnings.warn(f"genes with no resolvable SNP dropped: {list(dropped)}", stacklevel=2)
    if unknown:
        warnings.warn(f"{len(set(unknown))} SNP ids in the gene map are not genotyped", stacklevel=2)
    out = {g: Gene(g, c, w) for g, (c, w) in members.items() if c}
    return GeneMap(out, dataset.n_snps, dropped, tuple(dict.fromkeys(unknown)))


def load_pathwaymap(path, genemap: GeneMap) -> PathwayMap:
    """Read ``gene_id,pathway_id[,weight]``; genes absent from ``genemap`` are skipped."""
    genes, paths, weights = _read_membership(path, "gene_id", "pathway_id", "pathway")
    members: dict = {}
    missing = []
    for g, p, w in zip(genes, paths, weights):
        members.setdefault(p, ([], []))
        if g not in genemap.genes:
            missing.append(g)
            continue
        if g in members[p][0]:
            raise ValidationError(f"pathway {p} lists gene {g} twice")
        members[p][0].append(g)
        members[p][1].append(w)
    if missing:
        warnings.warn(f"genes not in the gene map were skipped: {sorted(set(missing))}", stacklevel=2)
    dropped = tuple(p for p, (gs, _) in members.items() if not gs)
    if dropped:
        warnings.warn(f"pathways with no resolvable gene dropped: {list(dropped)}", stacklevel=2)
    out = {p: Pathway(p, gs, w) for p, (gs, w) in members.items() if gs}
    return PathwayMap(out, genemap, dropped, tuple(dict.fromkeys(missing)))


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_dataset(dataset: SurvivalDataset, geno_path, pheno_path, covar_path=None):
    """Write the dataset in the three-file layout; floats use shortest round-trip repr."""
    with open(geno_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", *dataset.snp_ids])
        for sid, row in zip(dataset.subject_ids, dataset.geno):
            w.writerow([sid, *map(_fmt, row)])
    with open(pheno_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "time", "status"])
        for sid, t, d in zip(dataset.subject_ids, dataset.time, dataset.status):
            w.writerow([sid, _fmt(t), int(d)])
    if covar_path is not None:
        with open(covar_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subject_id", *dataset.covar_ids])
            for sid, row in zip(dataset.subject_ids, dataset.covar):
                w.writerow([sid, *map(_fmt, row)])


def write_genemap(genemap: GeneMap, snp_ids, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snp_id", "gene_id", "weight"])
        for g in genemap:
            for j, v in zip(g.snps, g.weights):
                w.writerow([snp_ids[j], g.gene_id, _fmt(v)])


def write_pathwaymap(pathwaymap: PathwayMap, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gene_id", "pathway_id", "weight"])
        for p in pathwaymap:
            for g, q in zip(p.genes, p.weights):
                w.writerow([g, p.pathway_id, _fmt(q)])
