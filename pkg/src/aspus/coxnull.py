"""Covariates-only Cox model fitted under the no-SNP-effect null.

The partial likelihood uses the Breslow convention for tied event times,
which is the same risk-set form the score weights are built from.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._risk import RiskOrder, log_prefix_sums, risk_weighted_means
from .survdata import SurvivalDataset

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 25
MAX_HALVINGS = 10


class RankDeficiencyError(ValueError):
    """Covariate design is singular (constant or collinear columns)."""


class ConvergenceError(RuntimeError):
    """Raised downstream when an unconverged null model is used without override."""


@dataclass(frozen=True, eq=False)
class NullModel:
    beta: np.ndarray
    mu: np.ndarray
    loglik: float
    iters: int
    converged: bool
    grad_norm: float
    eta: np.ndarray  # log mu, kept separately so extreme fits stay finite


def _breslow(time, status, covar, beta, order=None):
    order = order or RiskOrder(time)
    k = covar.shape[1]
    eta = covar @ beta if k else np.zeros(time.shape[0])
    ev = status[order.order] == 1
    log_s0 = log_prefix_sums(eta, order)
    loglik = float(np.sum(eta[order.order][ev] - log_s0[ev]))
    if k == 0:
        return loglik, np.zeros(0), np.zeros((0, 0))

    zs = covar[order.order]
    mean1 = risk_weighted_means(eta, covar, order, log_s0)
    cross = (covar[:, :, None] * covar[:, None, :]).reshape(-1, k * k)
    mean2 = risk_weighted_means(eta, cross, order, log_s0).reshape(-1, k, k)

    grad = np.sum(zs[ev] - mean1[ev], axis=0)
    m1 = mean1[ev]
    cov = mean2[ev] - m1[:, :, None] * m1[:, None, :]
    hess = -cov.sum(axis=0)
    return loglik, grad, 0.5 * (hess + hess.T)


def partial_loglik(dataset: SurvivalDataset, beta):
    """Breslow log partial likelihood with its gradient and Hessian in ``beta``.

    Returns
    -------
    loglik : float
    gradient : ndarray, shape (K,)
    hessian : ndarray, shape (K, K)
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != dataset.n_covar:
        raise ValueError(f"beta has {beta.size} entries for {dataset.n_covar} covariates")
    if not np.isfinite(beta).all():
        raise ValueError("beta must be finite")
    return _breslow(dataset.time, dataset.status, dataset.covar, beta)


def _check_rank(dataset: SurvivalDataset, rtol=1e-10):
    x = dataset.covar
    if x.shape[1] == 0:
        return
    centred = x - x.mean(axis=0)
    scale = np.maximum(np.abs(x).max(axis=0), 1.0)
    centred = centred / scale
    bad, kept = [], []
    for j in range(x.shape[1]):
        cand = centred[:, kept + [j]]
        s = np.linalg.svd(cand, compute_uv=False)
        if s[-1] <= rtol * max(s[0], 1.0) * np.sqrt(x.shape[0]):
            bad.append(dataset.covar_ids[j] if dataset.covar_ids else str(j))
        else:
            kept.append(j)
    if bad:
        raise RankDeficiencyError(
            f"covariate design is rank deficient; constant or collinear columns: {bad}"
        )


def fit_null(dataset: SurvivalDataset, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> NullModel:
    """Newton-Raphson with step halving for the covariates-only Cox model.

    ``converged`` is set when the gradient max-norm drops below ``tol`` within
    ``max_iter`` Newton steps. With no covariates every relative hazard is 1.
    """
    if dataset.n < 2:
        raise ValueError("need at least two subjects")
    if dataset.n_events == 0:
        raise ValueError("no events; the null model is undefined")
    _check_rank(dataset)

    order = RiskOrder(dataset.time)
    args = (dataset.time, dataset.status, dataset.covar)
    k = dataset.n_covar
    beta = np.zeros(k)
    ll, grad, hess = _breslow(*args, beta, order)
    if k == 0:
        return NullModel(beta, np.ones(dataset.n), ll, 0, True, 0.0, np.zeros(dataset.n))

    it = 0
    while np.max(np.abs(grad)) >= tol and it < max_iter:
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError(
                f"singular information matrix at iteration {it} (columns {list(dataset.covar_ids)})"
            ) from None
        it += 1
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step
            c_ll, c_grad, c_hess = _breslow(*args, cand, order)
            if np.isfinite(c_ll) and c_ll >= ll - 1e-12 * max(1.0, abs(ll)):
                accepted = True
                break
            step = step / 2
        if not accepted:
            log.warning("step halving exhausted at iteration %d", it)
            break
        beta, ll, grad, hess = cand, c_ll, c_grad, c_hess

    gnorm = float(np.max(np.abs(grad)))
    converged = gnorm < tol
    if not converged:
        log.warning("Cox null fit did not converge: |grad|max=%.3g after %d iterations", gnorm, it)
    eta = dataset.covar @ beta
    return NullModel(beta, np.exp(eta), ll, it, converged, gnorm, eta)
