import numpy as np
import pytest

from aspus.coxnull import ConvergenceError, NullModel, fit_null
from aspus.score_engine import (NoEventsError, PermutationError, build_weight_table, permuted_scores,
                                score_observed, score_permuted)
from aspus.survdata import SurvivalDataset
from oracles import naive_omega, naive_score


def _ds(geno, time, status, covar=None):
    geno = np.asarray(geno, dtype=float).reshape(len(time), -1)
    n = len(time)
    covar = np.zeros((n, 0)) if covar is None else np.asarray(covar, dtype=float).reshape(n, -1)
    return SurvivalDataset([f"s{i}" for i in range(n)], geno, covar, time, status,
                           [f"rs{j}" for j in range(geno.shape[1])],
                           [f"c{k}" for k in range(covar.shape[1])])


def _null(eta):
    eta = np.asarray(eta, dtype=float)
    with np.errstate(over="ignore"):
        mu = np.exp(eta)  # only eta is used downstream
    return NullModel(np.zeros(0), mu, 0.0, 0, True, 0.0, eta)


def test_omega_equal_hazards():
    ds = _ds([0, 1, 2], [1, 2, 3], [1, 1, 1])
    wt = build_weight_table(ds, _null(np.zeros(3)))
    expect = [[1 / 3, 1 / 3, 1 / 3], [0, 1 / 2, 1 / 2], [0, 0, 1]]
    np.testing.assert_allclose(wt.omega, expect, rtol=1e-15)


def test_omega_unequal_hazards():
    ds = _ds([0, 1], [1, 2], [1, 0])
    wt = build_weight_table(ds, _null(np.log([2.0, 1.0])))
    np.testing.assert_allclose(wt.omega, [[2 / 3, 1 / 3]], rtol=1e-15)


def test_score_two_subjects():
    # one event, equal hazards, dosages (2, 0): U = 2 - 1
    ds = _ds([2, 0], [1, 2], [1, 0])
    wt = build_weight_table(ds, _null(np.zeros(2)))
    np.testing.assert_allclose(score_observed(ds, wt), [1.0], rtol=1e-15)


def test_omega_matches_naive(rng, make_dataset):
    ds = make_dataset(rng, n=8, p=2, k=2)
    nm = fit_null(ds)
    wt = build_weight_table(ds, nm)
    expect, rows = naive_omega(nm.eta, ds.time, ds.status)
    np.testing.assert_array_equal(wt.event_rows, rows)
    np.testing.assert_allclose(wt.omega, expect, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(wt.omega.sum(axis=1), 1.0, rtol=1e-13)
    np.testing.assert_allclose(wt.omega.sum(axis=0), wt.collapsed, rtol=1e-12)


def test_risk_sets_nested(rng, make_dataset):
    ds = make_dataset(rng, n=30, p=1, k=1)
    wt = build_weight_table(ds, fit_null(ds))
    a = wt.risk.dense().astype(bool)
    # event rows are in ascending time, so later risk sets are subsets of earlier ones
    assert all((a[k + 1] <= a[k]).all() for k in range(len(a) - 1))
    np.testing.assert_array_equal(wt.risk.sizes(), a.sum(axis=1))


def test_observed_score_matches_naive(rng, make_dataset):
    for _ in range(10):
        ds = make_dataset(rng, n=25, p=5, k=2, dosage="continuous")
        nm = fit_null(ds)
        wt = build_weight_table(ds, nm)
        expect = naive_score(ds.geno, nm.eta, ds.time, ds.status)
        np.testing.assert_allclose(score_observed(ds, wt), expect, rtol=1e-10, atol=1e-12)
        wt2 = build_weight_table(ds, nm, cache_zbar=False)
        np.testing.assert_allclose(score_observed(ds, wt2), expect, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("method", ["residual", "table"])
def test_identity_permutation(rng, make_dataset, method):
    ds = make_dataset(rng, n=40, p=6, k=2)
    wt = build_weight_table(ds, fit_null(ds))
    u = score_permuted(ds, wt, np.arange(ds.n), method=method)
    np.testing.assert_allclose(u, score_observed(ds, wt), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("method", ["residual", "table"])
def test_permuted_matches_explicit_copy(rng, make_dataset, method):
    ds = make_dataset(rng, n=12, p=3, k=2)
    nm = fit_null(ds)
    wt = build_weight_table(ds, nm)
    for _ in range(50):
        perm = rng.permutation(ds.n)
        expect = naive_score(ds.geno[perm], nm.eta, ds.time, ds.status)
        got = score_permuted(ds, wt, perm, method=method)
        np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-10)


def test_batch_scores_match_single(rng, make_dataset):
    ds = make_dataset(rng, n=20, p=4, k=1)
    wt = build_weight_table(ds, fit_null(ds))
    perms = np.stack([rng.permutation(ds.n) for _ in range(7)])
    batch = permuted_scores(wt.residual, ds.geno, perms)
    for b in range(7):
        np.testing.assert_allclose(batch[b], score_permuted(ds, wt, perms[b]), rtol=1e-13, atol=1e-14)


def test_omega_ignores_genotypes(rng, make_dataset):
    ds = make_dataset(rng, n=15, p=2, k=2)
    nm = fit_null(ds)
    other = ds.with_geno(rng.integers(0, 3, size=(15, 5)).astype(float), [f"x{j}" for j in range(5)])
    np.testing.assert_array_equal(build_weight_table(ds, nm).omega, build_weight_table(other, nm).omega)


def test_constant_column_scores_zero(rng, make_dataset):
    ds = make_dataset(rng, n=30, p=2, k=1)
    geno = np.column_stack([ds.geno[:, 0], np.full(30, 1.0)])
    ds = ds.with_geno(geno, ["rs0", "const"])
    wt = build_weight_table(ds, fit_null(ds))
    assert abs(score_observed(ds, wt)[1]) < 1e-12
    assert abs(score_permuted(ds, wt, rng.permutation(30))[1]) < 1e-12


def test_residual_sums_to_zero(rng, make_dataset):
    ds = make_dataset(rng, n=50, p=1, k=2)
    wt = build_weight_table(ds, fit_null(ds))
    assert abs(wt.residual.sum()) < 1e-10


@pytest.mark.parametrize("perm", [[0, 0, 1, 2], [0, 1, 2, 4], [0, 1, 2], [[0, 1, 2, 3]], [0.0, 1.0, 2.0, 3.0]])
def test_bad_permutation(perm):
    ds = _ds([0, 1, 2, 1], [1, 2, 3, 4], [1, 1, 0, 1])
    wt = build_weight_table(ds, _null(np.zeros(4)))
    with pytest.raises(PermutationError):
        score_permuted(ds, wt, np.asarray(perm))


def test_no_events():
    ds = _ds([0, 1, 2], [1, 2, 3], [0, 0, 0])
    with pytest.raises(NoEventsError):
        build_weight_table(ds, _null(np.zeros(3)))


def test_unconverged_refused_unless_allowed():
    ds = _ds([0, 1, 2], [1, 2, 3], [1, 1, 0])
    nm = NullModel(np.zeros(0), np.ones(3), 0.0, 25, False, 1.0, np.zeros(3))
    with pytest.raises(ConvergenceError):
        build_weight_table(ds, nm)
    assert build_weight_table(ds, nm, allow_unconverged=True).n_events == 2


def test_unknown_method():
    ds = _ds([0, 1], [1, 2], [1, 1])
    wt = build_weight_table(ds, _null(np.zeros(2)))
    with pytest.raises(ValueError, match="unknown"):
        score_permuted(ds, wt, [0, 1], method="bogus")


def test_extreme_hazards_finite():
    ds = _ds([0, 1, 2, 1], [1, 2, 3, 4], [1, 1, 1, 0])
    wt = build_weight_table(ds, _null([800.0, -700.0, 5.0, 900.0]))
    assert np.isfinite(wt.omega).all() and np.isfinite(wt.residual).all()
    np.testing.assert_allclose(wt.omega.sum(axis=1), 1.0)
    assert np.isfinite(score_observed(ds, wt)).all()
