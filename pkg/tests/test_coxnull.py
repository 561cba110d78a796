import math

import numpy as np
import pytest

from aspus.coxnull import RankDeficiencyError, fit_null, partial_loglik
from aspus.survdata import SurvivalDataset
from oracles import finite_diff_grad, grid_argmax_1d, naive_loglik


def _ds(covar, time, status):
    covar = np.asarray(covar, dtype=float).reshape(len(time), -1)
    n = len(time)
    return SurvivalDataset([str(i) for i in range(n)], np.zeros((n, 1)), covar, time, status, ["rs"],
                           [f"c{k}" for k in range(covar.shape[1])])


# n=6, one covariate, a tie at t=2 between an event and a censoring
HAND = dict(covar=[0.5, 1.2, -0.3, 2.0, 0.0, 1.0], time=[1, 2, 2, 3, 4, 5], status=[1, 1, 0, 1, 1, 0])
# golden-section maximum of the direct Breslow likelihood (tests/oracles.py)
HAND_BETA = 0.3123011636222389


def test_no_covariates():
    ds = _ds(np.zeros((4, 0)), [1, 2, 3, 4], [1, 0, 1, 1])
    nm = fit_null(ds)
    assert nm.beta.size == 0 and nm.converged
    np.testing.assert_array_equal(nm.mu, 1.0)
    # risk sets of sizes 4, 2, 1 under equal hazards
    assert nm.loglik == pytest.approx(-math.log(4) - math.log(2) - math.log(1))


def test_constant_covariate_singular():
    ds = _ds(np.ones(5), [1, 2, 3, 4, 5], [1, 1, 0, 1, 1])
    with pytest.raises(RankDeficiencyError, match="c0"):
        fit_null(ds)


def test_collinear_covariates_named():
    x = np.array([0.1, 0.5, -0.2, 1.0, 0.3])
    ds = _ds(np.column_stack([x, 2 * x + 1]), [1, 2, 3, 4, 5], [1, 1, 0, 1, 1])
    with pytest.raises(RankDeficiencyError, match="c1"):
        fit_null(ds)


def test_hand_dataset_matches_grid_oracle():
    ds = _ds(**HAND)
    nm = fit_null(ds)
    assert nm.converged
    assert nm.beta[0] == pytest.approx(HAND_BETA, abs=1e-6)
    assert nm.loglik == pytest.approx(naive_loglik(HAND["covar"], HAND["time"], HAND["status"], nm.beta))


def test_loglik_matches_direct_sum(rng, make_dataset):
    for _ in range(5):
        ds = make_dataset(rng, n=25, k=3)
        beta = rng.normal(scale=0.7, size=3)
        ll, _, _ = partial_loglik(ds, beta)
        assert ll == pytest.approx(naive_loglik(ds.covar, ds.time, ds.status, beta), rel=1e-12)


def test_gradient_at_zero_is_centered_sum(rng, make_dataset):
    ds = make_dataset(rng, n=15, k=2)
    _, grad, _ = partial_loglik(ds, np.zeros(2))
    expect = np.zeros(2)
    for i in np.flatnonzero(ds.status):
        at_risk = ds.time >= ds.time[i]
        expect += ds.covar[i] - ds.covar[at_risk].mean(axis=0)
    np.testing.assert_allclose(grad, expect, rtol=1e-12, atol=1e-12)


def test_no_events_zero():
    ds = _ds([0.3, -0.1, 0.8], [1, 2, 3], [0, 0, 0])
    ll, grad, hess = partial_loglik(ds, [0.4])
    assert ll == 0 and (grad == 0).all() and (hess == 0).all()


def test_derivatives_match_finite_differences(rng, make_dataset):
    ds = make_dataset(rng, n=30, k=3)
    f = lambda b: partial_loglik(ds, b)[0]  # noqa: E731
    g = lambda b: partial_loglik(ds, b)[1]  # noqa: E731
    for _ in range(10):
        beta = rng.normal(scale=0.5, size=3)
        _, grad, hess = partial_loglik(ds, beta)
        np.testing.assert_allclose(grad, finite_diff_grad(f, beta), rtol=1e-5, atol=1e-7)
        num_hess = np.array([finite_diff_grad(lambda b: g(b)[k], beta) for k in range(3)])
        np.testing.assert_allclose(hess, num_hess, rtol=1e-5, atol=1e-7)


def test_hessian_negative_definite_at_optimum(rng, make_dataset):
    ds = make_dataset(rng, n=40, k=2)
    nm = fit_null(ds)
    _, _, hess = partial_loglik(ds, nm.beta)
    assert np.linalg.eigvalsh(hess).max() < 0


def test_extreme_beta_stays_finite():
    ds = _ds([300.0, -250.0, 10.0, 400.0], [1, 2, 3, 4], [1, 1, 1, 0])
    ll, grad, hess = partial_loglik(ds, [5.0])
    assert np.isfinite(ll) and np.isfinite(grad).all() and np.isfinite(hess).all()
    mpmath = pytest.importorskip("mpmath")
    eta = [mpmath.mpf(5) * x for x in (300, -250, 10, 400)]
    t = [1, 2, 3, 4]
    expect = sum(eta[i] - mpmath.log(sum(mpmath.exp(eta[l]) for l in range(4) if t[l] >= t[i]))
                 for i in range(3))
    assert ll == pytest.approx(float(expect), rel=1e-12)


def test_score_at_mle_vanishes(rng, make_dataset):
    for _ in range(5):
        ds = make_dataset(rng, n=60, k=3)
        nm = fit_null(ds)
        assert nm.converged
        _, grad, _ = partial_loglik(ds, nm.beta)
        assert np.max(np.abs(grad)) < 1e-9
        np.testing.assert_allclose(nm.mu, np.exp(ds.covar @ nm.beta))


def test_non_convergence_flagged():
    # covariate perfectly separates early events from late censorings: monotone likelihood
    ds = _ds([3.0, 2.0, 1.0, 0.0, -1.0], [1, 2, 3, 4, 5], [1, 1, 1, 0, 0])
    nm = fit_null(ds, max_iter=5)
    assert not nm.converged
    assert nm.iters <= 5


def test_likelihood_ascent(rng, make_dataset, monkeypatch):
    import aspus.coxnull as cx

    seen = []
    real = cx._breslow

    def spy(*args, **kw):
        out = real(*args, **kw)
        seen.append(out[0])
        return out

    monkeypatch.setattr(cx, "_breslow", spy)
    ds = make_dataset(rng, n=50, k=2)
    nm = cx.fit_null(ds)
    # accepted iterates are non-decreasing; the final loglik is the maximum seen
    assert nm.loglik >= max(seen) - 1e-12
    assert nm.loglik >= seen[0]


def test_hand_oracle_is_a_maximum():
    f = lambda b: naive_loglik(HAND["covar"], HAND["time"], HAND["status"], [b])  # noqa: E731
    assert grid_argmax_1d(f) == pytest.approx(HAND_BETA, abs=1e-8)
