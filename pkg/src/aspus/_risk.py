"""Sorted risk-set bookkeeping shared by the Cox fit and the score engine.

Subjects are sorted by decreasing observed time, so the risk set
``{j : X_j >= t}`` of any event time is a prefix of the sorted order. Tied
times share the prefix that ends at the last member of the tie group.
Cumulative sums over prefixes are taken in log space, which keeps them
finite for any finite linear predictor.
"""
import numpy as np


class RiskOrder:
    __slots__ = ("order", "time_sorted", "prefix_end")

    def __init__(self, time):
        time = np.asarray(time, dtype=float)
        self.order = np.argsort(-time, kind="stable")
        self.time_sorted = time[self.order]
        # last sorted position whose time is >= time_sorted[k]
        self.prefix_end = np.searchsorted(-self.time_sorted, -self.time_sorted, side="right") - 1


def log_prefix_sums(log_terms, order: RiskOrder):
    """``log sum_{j in R(X_i)} exp(log_terms[j])`` for every subject i (sorted order).

    ``log_terms`` may be 1-D or 2-D (subjects along axis 0); ``-inf`` encodes zero terms.
    """
    acc = np.logaddexp.accumulate(log_terms[order.order], axis=0)
    return acc[order.prefix_end]


def signed_log(x):
    """Split ``x`` into log positive and log negative parts (``-inf`` where absent)."""
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(x, 0.0)), np.log(np.maximum(-x, 0.0))


def risk_weighted_means(eta, values, order: RiskOrder, log_s0=None):
    """Risk-set means of ``values`` (n x m) under weights ``exp(eta)``, sorted order."""
    if log_s0 is None:
        log_s0 = log_prefix_sums(eta, order)
    pos, neg = signed_log(values)
    lp = log_prefix_sums(eta[:, None] + pos, order)
    ln = log_prefix_sums(eta[:, None] + neg, order)
    return np.exp(lp - log_s0[:, None]) - np.exp(ln - log_s0[:, None])
