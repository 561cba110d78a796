"""Permutation-invariant weights and SNP score vectors under the null.

For every event time ``X_i`` the weight of subject ``j`` is

    omega_ij = mu_j * I(X_j >= X_i) / sum_l mu_l * I(X_l >= X_i)

and depends only on covariates, times and status, never on genotypes. The
score of the SNP block is ``U = sum_i delta_i (Z_i - sum_j Z_j omega_ij)``.

Summing the weights over events first gives, for every subject, the
collapsed weight ``c_j = sum_i delta_i omega_ij`` and the residual
``r_j = delta_j - c_j``, so that ``U = sum_j r_j Z_j``. When genotype rows are
re-indexed by a permutation ``perm`` (subject ``j`` receives the genotypes of
subject ``perm[j]``), the permuted score is ``sum_j r_j Z_perm[j]`` and costs a
single ``n x P`` pass over the unpermuted matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._risk import RiskOrder, log_prefix_sums
from .coxnull import ConvergenceError, NullModel
from .survdata import SurvivalDataset

# omega is regenerated block-wise above this many entries (~400MB of float64)
MAX_DENSE_OMEGA = 50_000_000
_OMEGA_BLOCK = 256


class NoEventsError(ValueError):
    """The dataset has no observed events; the score is undefined."""


class PermutationError(ValueError):
    """The index array is not a bijection on subjects."""


@dataclass(frozen=True, eq=False)
class RiskIndicator:
    """Risk-set membership ``a_ij = I(X_j >= X_i)`` for every event time (rows).

    Stored implicitly: ``time`` of subjects and ``event_times``; ``dense()`` builds the matrix.
    """

    event_times: np.ndarray
    time: np.ndarray

    def dense(self) -> np.ndarray:
        return (self.time[None, :] >= self.event_times[:, None]).astype(np.int8)

    def sizes(self) -> np.ndarray:
        t = np.sort(self.time)
        return t.size - np.searchsorted(t, self.event_times, side="left")


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Everything about the null weights that permutations never touch.

    Attributes
    ----------
    event_rows : subject indices with ``delta_i = 1``, ordered by event time
    eta : log relative hazards ``log mu_j``
    log_denom : per event, ``log sum_l mu_l I(X_l >= X_i)``
    collapsed : ``c_j``, the sum of subject ``j``'s weights over all events
    residual : ``delta_j - c_j``
    zbar_cache : per event, risk-set weighted mean genotype of the observed matrix
    """

    event_rows: np.ndarray
    time: np.ndarray
    status: np.ndarray
    eta: np.ndarray
    log_denom: np.ndarray
    collapsed: np.ndarray
    residual: np.ndarray
    zbar_cache: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def n_events(self) -> int:
        return self.event_rows.size

    @property
    def risk(self) -> RiskIndicator:
        return RiskIndicator(self.time[self.event_rows], self.time)

    def omega_rows(self, start=0, stop=None, col_index=None):
        """Rows ``start:stop`` of omega (events x subjects), computed on the fly.

        ``col_index`` reorders subjects: column ``k`` then holds the weight of
        subject ``col_index[k]``.
        """
        stop = self.n_events if stop is None else stop
        rows = self.event_rows[start:stop]
        eta, time = self.eta, self.time
        if col_index is not None:
            eta, time = eta[col_index], time[col_index]
        at_risk = time[None, :] >= self.time[rows][:, None]
        w = np.exp(eta[None, :] - self.log_denom[start:stop, None])
        return np.where(at_risk, w, 0.0)

    @property
    def omega(self) -> np.ndarray:
        """Dense omega; refuses tables larger than ``MAX_DENSE_OMEGA`` entries."""
        if self.n_events * self.n > MAX_DENSE_OMEGA:
            raise MemoryError(
                f"omega has {self.n_events * self.n} entries; iterate omega_rows() instead"
            )
        return self.omega_rows()

    def weighted_means(self, geno, perm=None) -> np.ndarray:
        """``sum_j Z~_j omega_ij`` for every event, with ``Z~_j = geno[perm[j]]``."""
        geno = np.asarray(geno, dtype=float)
        col_index = None if perm is None else _inverse(perm)
        out = np.empty((self.n_events, geno.shape[1]))
        for s in range(0, self.n_events, _OMEGA_BLOCK):
            e = min(s + _OMEGA_BLOCK, self.n_events)
            out[s:e] = self.omega_rows(s, e, col_index) @ geno
        return out


def build_weight_table(dataset: SurvivalDataset, null_model: NullModel,
                       allow_unconverged=False, cache_zbar=True) -> WeightTable:
    """Precompute risk sets and null weights once for all permutations."""
    if dataset.n_events == 0:
        raise NoEventsError("no events; score undefined")
    if not null_model.converged and not allow_unconverged:
        raise ConvergenceError(
            "null Cox model did not converge; pass allow_unconverged=True to proceed"
        )
    eta = np.asarray(null_model.eta, dtype=float)
    if eta.shape != (dataset.n,):
        raise ValueError("null model does not match the dataset")
    time, status = dataset.time, dataset.status

    order = RiskOrder(time)
    log_s0 = np.empty(dataset.n)
    log_s0[order.order] = log_prefix_sums(eta, order)

    ev = np.flatnonzero(status == 1)
    ev = ev[np.argsort(time[ev], kind="stable")]
    log_denom = log_s0[ev]

    # c_j = mu_j * sum_{events i: X_i <= X_j} 1 / denom_i, accumulated from the earliest time
    asc = order.order[::-1]
    inc = np.where(status[asc] == 1, -log_s0[asc], -np.inf)
    acc = np.logaddexp.accumulate(inc)
    t_asc = time[asc]
    last = np.searchsorted(t_asc, t_asc, side="right") - 1
    log_h = np.empty(dataset.n)
    log_h[asc] = acc[last]
    collapsed = np.exp(eta + log_h)
    residual = status - collapsed

    wt = WeightTable(ev, time, status, eta, log_denom, collapsed, residual)
    if cache_zbar:
        object.__setattr__(wt, "zbar_cache", _zbar(wt, dataset.geno, order, log_s0))
    for a in (wt.event_rows, wt.eta, wt.log_denom, wt.collapsed, wt.residual):
        a.setflags(write=False)
    return wt


def _zbar(wt: WeightTable, geno, order, log_s0):
    # dosages are non-negative, so log-space prefix sums need no sign split
    with np.errstate(divide="ignore"):
        lz = np.log(geno)
    sums = np.empty_like(lz)
    sums[order.order] = log_prefix_sums(wt.eta[:, None] + lz, order)
    rows = wt.event_rows
    return np.exp(sums[rows] - log_s0[rows][:, None])


def _inverse(perm):
    perm = np.asarray(perm)
    n = perm.size
    if perm.ndim != 1 or not np.issubdtype(perm.dtype, np.integer):
        raise PermutationError("permutation must be a 1-D integer array")
    inv = np.full(n, -1, dtype=np.intp)
    if perm.min(initial=0) < 0 or perm.max(initial=0) >= n:
        raise PermutationError("permutation index out of range")
    inv[perm] = np.arange(n)
    if (inv < 0).any():
        raise PermutationError("permutation is not a bijection (repeated indices)")
    return inv


def inverse_permutations(perms) -> np.ndarray:
    """Row-wise inverses of a stack of permutations (no validation)."""
    perms = np.asarray(perms)
    inv = np.empty_like(perms)
    np.put_along_axis(inv, perms, np.arange(perms.shape[1])[None, :], axis=1)
    return inv


def permuted_scores(residual, geno, perms) -> np.ndarray:
    """Scores for a stack of permutations (rows of ``perms``) against an unpermuted ``geno``.

    Only index arrays and residual vectors are permuted; ``geno`` is never copied.
    """
    inv = inverse_permutations(perms)
    return residual[inv] @ geno


def score_observed(dataset: SurvivalDataset, wt: WeightTable) -> np.ndarray:
    """Observed SNP score ``sum_events (Z_i - zbar(X_i))``."""
    zbar = wt.zbar_cache
    if zbar is None:
        zbar = wt.weighted_means(dataset.geno)
    return dataset.geno[wt.event_rows].sum(axis=0) - zbar.sum(axis=0)


def score_permuted(dataset: SurvivalDataset, wt: WeightTable, perm, method="residual") -> np.ndarray:
    """Score with genotype rows re-indexed by ``perm`` and (covariates, times, status) fixed.

    ``method="residual"`` uses the collapsed weights; ``method="table"`` sums
    per-event weighted means from the omega rows. Neither copies the genotype matrix.
    """
    inv = _inverse(perm)
    if inv.size != dataset.n:
        raise PermutationError(f"permutation of length {inv.size} for {dataset.n} subjects")
    geno = dataset.geno
    if method == "residual":
        return wt.residual[inv] @ geno
    if method == "table":
        observed = wt.status[inv] @ geno
        return observed - wt.weighted_means(geno, perm).sum(axis=0)
    raise ValueError(f"unknown method {method!r}")
