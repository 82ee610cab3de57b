import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mgcrf import baselines, gcrf
from mgcrf.baselines import (GpImputer, UnanchoredComponentWarning, fit_hgf_gcrf, fit_igcrf, fit_mi_gcrf,
                             gp_impute, harmonic_extension, hgf_impute)
from mgcrf.graph import GcrfParams, LabelMask, TemporalAttributedGraph, assemble_precision
from mgcrf.marginal import marginalize
from mgcrf.missingness import Kind, Mechanism, apply
from mgcrf.synth import SyntheticSpec, generate

from conftest import random_instance, random_similarity


@pytest.fixture(scope="module")
def small():
    ds = generate(SyntheticSpec(rows=7, cols=7, n_steps=3, seed=11))
    mask = apply(Mechanism(Kind.RANDOM, 0.3, seed=1), ds.graph, range(3))
    return ds, mask


def path3(labels=(0.0, np.nan, 1.0)):
    S = np.array([[0, 1.0, 0], [1.0, 0, 1.0], [0, 1.0, 0]])
    return TemporalAttributedGraph(np.zeros((1, 3, 1)), np.array([labels]), (S,))


# --- i-GCRF

def test_igcrf_with_everything_labeled_is_plain_fit(small):
    ds, _ = small
    a = gcrf.fit(ds.graph, ds.teacher_output)
    b = fit_igcrf(ds.graph, ds.teacher_output)
    np.testing.assert_array_equal(a.params.vector(), b.params.vector())
    params = GcrfParams.from_values([1.3], [0.4])
    blocks = baselines.igcrf_blocks(ds.graph, ds.teacher_output, LabelMask.full(3, 49))
    ll, ga, gb = gcrf.blocks_value_and_gradient(blocks, params)
    assert ll == gcrf.log_likelihood(params, ds.graph, ds.teacher_output)
    np.testing.assert_array_equal(np.concatenate([ga, gb]),
                                  np.concatenate(gcrf.gradient(params, ds.graph, ds.teacher_output)))


def test_igcrf_disconnected_labeled_set():
    g = path3((1.0, np.nan, 3.0))
    mask = LabelMask.from_labels(g.labels)
    r = np.array([[0.0, 0.0, 2.0]])
    params = GcrfParams.from_values([1.0], [2.0])
    blocks = baselines.igcrf_blocks(g, r, mask)
    ll, ga, gb = gcrf.blocks_value_and_gradient(blocks, params)
    # two isolated nodes: N(R_i, 1/(2a)) each, and the beta gradient only sees the (zero) trace term
    expected = sum(0.5 * np.log(2.0) - 0.5 * np.log(2 * np.pi) - (y - m) ** 2 for y, m in [(1, 0), (3, 2)])
    assert ll == pytest.approx(expected)
    assert gb[0] == pytest.approx(0.0, abs=1e-14)
    Q_LL = baselines.igcrf_precision(g, params, mask)[0].toarray()
    assert Q_LL[0, 1] == 0
    Q_star = marginalize(assemble_precision(g, params, r), mask).Q_star
    assert Q_star[0, 1] != 0


def test_igcrf_needs_labels():
    g = path3((np.nan, np.nan, np.nan))
    with pytest.raises(ValueError):
        fit_igcrf(g, np.zeros((1, 3)), LabelMask.from_labels(g.labels))


# --- Gaussian process

def dense_gp(X, y, Xs, ls, s2, n2, m):
    k = lambda A, B: s2 * np.exp(-0.5 * ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1) / ls ** 2)
    K = k(X, X) + n2 * np.eye(len(X))
    Ks = k(Xs, X)
    mean = m + Ks @ np.linalg.inv(K) @ (y - m)
    var = s2 - np.einsum("ij,jk,ik->i", Ks, np.linalg.inv(K), Ks) + n2
    return mean, var


def test_gp_matches_dense_formula():
    X = np.array([[0.0], [0.7], [1.1], [2.0], [3.5]])
    y = np.array([0.3, -0.2, 0.5, 1.4, 0.1])
    Xs = np.array([[0.2], [1.5], [2.9], [5.0]])
    hyper = GpImputer(0.8, 1.3, 0.05, 0.2)
    mean, var = hyper.posterior(X, y, Xs)
    m2, v2 = dense_gp(X, y, Xs, 0.8, 1.3, 0.05, 0.2)
    np.testing.assert_allclose(mean, m2, atol=1e-8)
    np.testing.assert_allclose(var, v2, atol=1e-8)


def test_gp_interpolates_and_reverts():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([1.0, -1.0, 2.0])
    hyper = GpImputer(0.5, 2.0, 0.0, 0.3)
    mean, var = hyper.posterior(X, y, X[1:2])
    assert mean[0] == pytest.approx(-1.0, abs=1e-6)
    assert var[0] == pytest.approx(0.0, abs=1e-6)
    mean, var = hyper.posterior(X, y, np.array([[1e6]]))
    assert mean[0] == pytest.approx(0.3)
    assert var[0] == pytest.approx(2.0)


def test_gp_heuristic_and_impute(small):
    ds, mask = small
    L = mask.labeled_index()
    y_L = ds.graph.labels.ravel()[L]
    hyper = GpImputer.heuristic(ds.graph.features.reshape(-1, 30)[L], y_L)
    assert hyper.signal_var == pytest.approx(np.var(y_L))
    assert hyper.noise_var == pytest.approx(0.1 * hyper.signal_var)
    mean, var = gp_impute(ds.graph.features, y_L, mask)
    assert mean.shape == var.shape == (mask.unlabeled_index().size,)
    assert (var >= 0).all()
    with pytest.raises(ValueError):
        GpImputer(-1.0, 1.0, 0.1)


# --- multiple imputation

def test_mi_without_missing_is_plain_fit(small):
    ds, _ = small
    a = fit_mi_gcrf(ds.graph, ds.teacher_output)
    b = gcrf.fit(ds.graph, ds.teacher_output)
    np.testing.assert_array_equal(a.params.vector(), b.params.vector())


def test_mi_is_deterministic(small):
    ds, mask = small
    a = fit_mi_gcrf(ds.graph, ds.teacher_output, mask, seed=3)
    b = fit_mi_gcrf(ds.graph, ds.teacher_output, mask, seed=3)
    np.testing.assert_array_equal(a.params.vector(), b.params.vector())


def test_mi_zero_variance_equals_single_imputation(small):
    ds, _ = small
    g = ds.graph
    # hidden nodes share features with labeled twins, so a noiseless GP pins them exactly
    X = g.features.copy()
    X[:, 1::2] = X[:, 0:-1:2]
    g = g.replace(features=X)
    observed = np.ones((3, 49), dtype=bool)
    observed[:, 1::2] = False
    mask = LabelMask(observed)
    L = mask.labeled_index()
    hyper = GpImputer(0.05, 1.0, 0.0, 21.0)
    mi = fit_mi_gcrf(g, ds.teacher_output, mask, hyper=hyper, seed=0)
    mean_U, var_U = gp_impute(g.features, g.labels.ravel()[L], mask, hyper)
    assert var_U.max() < 1e-8
    completed = g.labels.ravel().copy()
    completed[mask.unlabeled_index()] = mean_U
    single = gcrf.fit(g, ds.teacher_output, completed.reshape(3, 49))
    np.testing.assert_allclose(mi.params.vector(), single.params.vector(), atol=1e-4)


# --- harmonic fields

def jacobi_propagation(W, labeled, values, tol=1e-10):
    n = W.shape[0]
    f = np.zeros(n)
    f[labeled] = values
    free = np.setdiff1d(np.arange(n), labeled)
    deg = W.sum(axis=1)
    for _ in range(200000):
        new = f.copy()
        new[free] = (W[free] @ f) / deg[free]
        if np.abs(new - f).max() < tol:
            return new[free]
        f = new
    raise AssertionError("propagation did not converge")


def test_harmonic_path_and_single_neighbor():
    f_U, unanchored = harmonic_extension(path3().similarity[0][0], [0, 2], [0.0, 1.0])
    assert f_U[0] == pytest.approx(0.5) and not unanchored.any()
    W = sp.csr_matrix(np.array([[0, 2.0], [2.0, 0]]))
    f_U, _ = harmonic_extension(W, [1], [7.5])
    assert f_U[0] == 7.5


def test_harmonic_matches_label_propagation(rng):
    W = random_similarity(rng, 10, density=0.4)
    chain = np.arange(9)
    W[chain, chain + 1] = W[chain + 1, chain] = np.maximum(W[chain, chain + 1], 0.3)
    labeled = np.array([0, 4, 7])
    values = rng.normal(size=3)
    f_U, unanchored = harmonic_extension(sp.csr_matrix(W), labeled, values)
    assert not unanchored.any()
    np.testing.assert_allclose(f_U, jacobi_propagation(W, labeled, values), atol=1e-8)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_harmonic_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 25))
    W = sp.csr_matrix(random_similarity(rng, n, density=rng.uniform(0.05, 0.6)))
    labeled = rng.choice(n, size=int(rng.integers(1, n)), replace=False)
    values = rng.normal(size=labeled.size)
    f_U, unanchored = harmonic_extension(W, labeled, values)
    from scipy.sparse.csgraph import connected_components
    _, comp = connected_components(W, directed=False)
    U = np.setdiff1d(np.arange(n), labeled)
    for u, f, free in zip(U, f_U, unanchored):
        if free:
            continue
        vals = values[comp[labeled] == comp[u]]
        assert vals.min() - 1e-9 <= f <= vals.max() + 1e-9


def test_hgf_unanchored_component_gets_mean():
    S = np.zeros((4, 4))
    S[0, 1] = S[1, 0] = 1.0
    S[2, 3] = S[3, 2] = 1.0
    g = TemporalAttributedGraph(np.zeros((1, 4, 1)), np.array([[2.0, np.nan, np.nan, np.nan]]), (S,))
    with pytest.warns(UnanchoredComponentWarning):
        f_U = hgf_impute(g, LabelMask.from_labels(g.labels))
    np.testing.assert_allclose(f_U, [2.0, 2.0, 2.0])


def test_hgf_gcrf(small):
    ds, mask = small
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnanchoredComponentWarning)
        model = fit_hgf_gcrf(ds.graph, ds.teacher_output, mask)
    assert np.isfinite(model.params.vector()).all()
    full = fit_hgf_gcrf(ds.graph, ds.teacher_output)
    np.testing.assert_array_equal(full.params.vector(), gcrf.fit(ds.graph, ds.teacher_output).params.vector())
    completed = baselines.hgf_complete(ds.graph, mask)
    np.testing.assert_array_equal(completed[mask.observed], ds.graph.labels[mask.observed])


def test_baselines_deterministic(rng):
    g, r, _, mask = random_instance(rng, N=8, T=2, K=1, L=1)
    for fn in (fit_igcrf, fit_hgf_gcrf):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnanchoredComponentWarning)
            a, b = fn(g, r, mask), fn(g, r, mask)
        np.testing.assert_array_equal(a.params.vector(), b.params.vector())
