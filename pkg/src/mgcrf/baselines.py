"""Comparison methods: i-GCRF, multiple imputation, harmonic-field imputation.

The unstructured neural network baseline lives in :mod:`mgcrf.nn`.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist

from .gcrf import Block, GcrfModel, fit, maximize
from .graph import GcrfParams, LabelMask, as_predictions, laplacian, masked_labels, precision_block


class UnanchoredComponentWarning(UserWarning):
    """A connected component had no labeled node; its nodes got the global labeled mean."""


# --- i-GCRF -----------------------------------------------------------------

def _labeled_subgraph_laplacians(graph, t, nodes):
    return [laplacian(layer[t][nodes][:, nodes]) for layer in graph.similarity]


def igcrf_blocks(graph, r, mask, labels_L=None):
    y = masked_labels(graph, mask, labels_L)
    r = as_predictions(r, graph.n_steps, graph.n_nodes)
    blocks = []
    for t in range(graph.n_steps):
        L = np.flatnonzero(mask.observed[t])
        if L.size == 0:
            continue
        laps = _labeled_subgraph_laplacians(graph, t, L)
        blocks.append(Block(laps, r[:, t, L], y[t, L], np.ones(L.size, dtype=bool)))
    return blocks


def igcrf_precision(graph, params, mask):
    """Per-step precision of the labeled-only subgraph that i-GCRF trains on."""
    out = []
    for t in range(graph.n_steps):
        L = np.flatnonzero(mask.observed[t])
        laps = _labeled_subgraph_laplacians(graph, t, L) if L.size else [sp.csr_matrix((0, 0))]
        out.append(precision_block(laps, params.alpha, params.beta) if L.size else sp.csr_matrix((0, 0)))
    return out


def fit_igcrf(graph, r, mask=None, labels_L=None, settings=None):
    """GCRF trained after deleting unlabeled nodes and every edge touching them."""
    mask = LabelMask.from_labels(graph.labels) if mask is None else mask
    blocks = igcrf_blocks(graph, r, mask, labels_L)
    if not blocks:
        raise ValueError("i-GCRF needs at least one labeled node")
    return maximize(blocks, settings)


# --- Gaussian-process multiple imputation ------------------------------------

@dataclass(frozen=True)
class GpImputer:
    """Squared-exponential GP over node features with a constant prior mean."""

    length_scale: float
    signal_var: float
    noise_var: float
    prior_mean: float = 0.0

    def __post_init__(self):
        if self.length_scale <= 0 or self.signal_var <= 0 or self.noise_var < 0:
            raise ValueError("GP hyperparameters must be positive (noise may be zero)")

    @classmethod
    def heuristic(cls, X_L, y_L, max_points=2000, seed=0):
        """Median pairwise distance, labeled-label variance, 10% noise."""
        X_L = np.asarray(X_L, dtype=float)
        if X_L.shape[0] > max_points:
            X_L = X_L[np.random.default_rng(seed).choice(X_L.shape[0], max_points, replace=False)]
        d = pdist(X_L) if X_L.shape[0] > 1 else np.ones(1)
        ls = float(np.median(d[d > 0])) if np.any(d > 0) else 1.0
        var = float(np.var(y_L))
        if var <= 0:
            var = 1.0
        return cls(ls, var, 0.1 * var, float(np.mean(y_L)))

    def kernel(self, A, B):
        d2 = cdist(A, B, "sqeuclidean")
        return self.signal_var * np.exp(-0.5 * d2 / self.length_scale ** 2)

    def posterior(self, X_L, y_L, X_U):
        """Predictive mean and variance of the labels at `X_U`."""
        X_L, X_U = np.atleast_2d(X_L), np.atleast_2d(X_U)
        y_L = np.asarray(y_L, dtype=float)
        K = self.kernel(X_L, X_L)
        jitter = self.noise_var if self.noise_var > 0 else 1e-10 * self.signal_var
        K[np.diag_indices_from(K)] += jitter
        try:
            cf = scipy.linalg.cho_factor(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("GP kernel matrix is not positive definite after jitter") from exc
        Ks = self.kernel(X_U, X_L)
        mean = self.prior_mean + Ks @ scipy.linalg.cho_solve(cf, y_L - self.prior_mean)
        V = scipy.linalg.solve_triangular(cf[0], Ks.T, lower=True)
        var = self.signal_var - np.einsum("ij,ij->j", V, V) + self.noise_var
        return mean, np.maximum(var, 0.0)


def gp_impute(features, labels_L, mask, hyper=None):
    """GP predictive mean and variance at the unlabeled entries (flat time-major order)."""
    X = np.asarray(features, dtype=float).reshape(-1, np.shape(features)[-1])
    L, U = mask.labeled_index(), mask.unlabeled_index()
    if L.size == 0:
        raise ValueError("GP imputation needs labeled entries")
    y_L = np.asarray(labels_L, dtype=float).ravel()
    if y_L.size != L.size:
        raise ValueError("labels_L does not match the mask")
    hyper = hyper or GpImputer.heuristic(X[L], y_L)
    if U.size == 0:
        return np.zeros(0), np.zeros(0)
    return hyper.posterior(X[L], y_L, X[U])


def fit_mi_gcrf(graph, r, mask=None, labels_L=None, n_samples=5, seed=0, hyper=None, settings=None):
    """Average (in log domain) of GCRFs fit to GP-sampled completions of the labels."""
    mask = LabelMask.from_labels(graph.labels) if mask is None else mask
    y = masked_labels(graph, mask, labels_L)
    L, U = mask.labeled_index(), mask.unlabeled_index()
    if U.size == 0:
        return fit(graph, r, y, settings)
    mean_U, var_U = gp_impute(graph.features, y.ravel()[L], mask, hyper)
    rng = np.random.default_rng(seed)
    fits = []
    for _ in range(n_samples):
        completed = y.ravel().copy()
        completed[U] = mean_U + np.sqrt(var_U) * rng.standard_normal(U.size)
        fits.append(fit(graph, r, completed.reshape(y.shape), settings))
    vec = np.mean([m.params.vector() for m in fits], axis=0)
    return GcrfModel(GcrfParams.from_vector(vec, fits[0].params.n_predictors))


# --- harmonic Gaussian fields -------------------------------------------------

def harmonic_extension(W, labeled, values):
    """Harmonic extension of `values` on nodes `labeled` over weights `W`.

    Returns the values at the remaining nodes (ascending index) and a boolean
    array marking those in components with no labeled node; those are left
    as NaN for the caller to fill.
    """
    W = sp.csr_matrix(W)
    n = W.shape[0]
    labeled = np.asarray(labeled, dtype=int)
    is_l = np.zeros(n, dtype=bool)
    is_l[labeled] = True
    U = np.flatnonzero(~is_l)
    f = np.full(n, np.nan)
    f[labeled] = values
    _, comp = connected_components(W, directed=False)
    anchored_comp = np.unique(comp[labeled])
    anchored = np.isin(comp, anchored_comp)
    A = U[anchored[U]]
    if A.size:
        deg = np.asarray(W.sum(axis=1)).ravel()
        lap_AA = sp.diags(deg[A]) - W[A][:, A]
        rhs = W[A][:, labeled] @ f[labeled]
        f[A] = scipy.sparse.linalg.spsolve(sp.csc_matrix(lap_AA), rhs) if A.size > 1 else rhs / lap_AA.toarray()[0, 0]
    return f[U], ~anchored[U]


def hgf_impute(graph, mask, labels_L=None, step=0):
    """Harmonic-field imputation of the unlabeled nodes at one step.

    Components without any labeled node receive the step's labeled mean
    (the overall labeled mean if the step has none) and trigger a warning.
    """
    y = masked_labels(graph, mask, labels_L)
    labeled = np.flatnonzero(mask.observed[step])
    if labeled.size == 0 and not mask.observed.any():
        raise ValueError("no labeled nodes to propagate from")
    f_U, unanchored = harmonic_extension(graph.combined_similarity(step), labeled, y[step, labeled])
    if unanchored.any():
        fill = np.nanmean(y[step]) if labeled.size else np.nanmean(y)
        f_U[unanchored] = fill
        warnings.warn(f"{int(unanchored.sum())} unlabeled nodes at step {step} lie in components "
                      "without labels; imputed the labeled mean", UnanchoredComponentWarning, stacklevel=2)
    return f_U


def hgf_complete(graph, mask, labels_L=None):
    y = masked_labels(graph, mask, labels_L)
    for t in range(graph.n_steps):
        U = np.flatnonzero(~mask.observed[t])
        if U.size:
            y[t, U] = hgf_impute(graph, mask, labels_L, t)
    return y


def fit_hgf_gcrf(graph, r, mask=None, labels_L=None, settings=None):
    """Plain GCRF fit on labels completed by harmonic-field imputation."""
    mask = LabelMask.from_labels(graph.labels) if mask is None else mask
    return fit(graph, r, hgf_complete(graph, mask, labels_L), settings)
