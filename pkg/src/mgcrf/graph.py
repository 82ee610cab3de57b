"""Attributed weighted temporal graphs and GCRF precision assembly.

Flat vectors over all (step, node) pairs use time-major order: index
``t * n_nodes + i``.  Precision matrices are block diagonal over steps, so
they are kept as one sparse block per step.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _canonical_similarity(S, n):
    S = sp.csr_matrix(S, dtype=float, copy=True)
    if S.shape != (n, n):
        raise ValueError(f"similarity matrix has shape {S.shape}, expected {(n, n)}")
    if S.nnz and S.data.min() < 0:
        raise ValueError("similarity weights must be nonnegative")
    if not np.isfinite(S.data).all():
        raise ValueError("similarity weights must be finite")
    if S.diagonal().any():
        raise ValueError("similarity matrix must have a zero diagonal")
    if abs(S - S.T).max() > 0:
        raise ValueError("similarity matrix must be symmetric")
    S.eliminate_zeros()
    S.sort_indices()
    return S


def laplacian(S):
    """Weighted graph Laplacian ``D - S`` of a similarity matrix."""
    S = sp.csr_matrix(S)
    deg = np.asarray(S.sum(axis=1)).ravel()
    return (sp.diags(deg) - S).tocsr()


@dataclass(frozen=True, eq=False)
class TemporalAttributedGraph:
    """Node features, optional labels and per-step similarity layers.

    ``similarity[l][t]`` is the sparse similarity of layer ``l`` at step
    ``t``.  A static layer stores the same matrix object at every step.
    Missing labels are NaN; ``coords`` holds integer (row, col) positions
    for grid graphs and is None otherwise.
    """

    features: np.ndarray
    labels: np.ndarray
    similarity: tuple
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 3:
            raise ValueError("features must have shape (n_steps, n_nodes, n_features)")
        T, N, _ = X.shape
        if not np.isfinite(X).all():
            raise ValueError("features must be finite")
        y = np.asarray(self.labels, dtype=float)
        if y.shape != (T, N):
            raise ValueError(f"labels have shape {y.shape}, expected {(T, N)}")
        if np.isinf(y).any():
            raise ValueError("labels must be finite or missing")
        if len(self.similarity) == 0:
            raise ValueError("at least one similarity layer is required")
        layers = []
        for layer in self.similarity:
            if sp.issparse(layer) or isinstance(layer, np.ndarray):
                S = _canonical_similarity(layer, N)
                layers.append((S,) * T)
            else:
                if len(layer) != T:
                    raise ValueError(f"per-step layer has {len(layer)} matrices, expected {T}")
                if all(m is layer[0] for m in layer):
                    S = _canonical_similarity(layer[0], N)
                    layers.append((S,) * T)
                else:
                    layers.append(tuple(_canonical_similarity(m, N) for m in layer))
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "similarity", tuple(layers))
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=int)
            if c.shape != (N, 2):
                raise ValueError("coords must have shape (n_nodes, 2)")
            object.__setattr__(self, "coords", _readonly(c))

    @property
    def n_steps(self):
        return self.features.shape[0]

    @property
    def n_nodes(self):
        return self.features.shape[1]

    @property
    def n_features(self):
        return self.features.shape[2]

    @property
    def n_layers(self):
        return len(self.similarity)

    @property
    def is_static(self):
        return all(all(m is layer[0] for m in layer) for layer in self.similarity)

    @property
    def observed(self):
        return ~np.isnan(self.labels)

    def combined_similarity(self, step):
        """Sum of all similarity layers at `step`."""
        W = self.similarity[0][step]
        for layer in self.similarity[1:]:
            W = W + layer[step]
        return sp.csr_matrix(W)

    def laplacians(self, step):
        return [laplacian(layer[step]) for layer in self.similarity]

    def replace(self, **changes):
        kw = dict(features=self.features, labels=self.labels,
                  similarity=self.similarity, coords=self.coords)
        kw.update(changes)
        return TemporalAttributedGraph(**kw)

    def subset_steps(self, steps):
        steps = np.atleast_1d(np.arange(self.n_steps)[steps])
        sim = []
        for layer in self.similarity:
            if all(m is layer[0] for m in layer):
                sim.append(layer[0])
            else:
                sim.append(tuple(layer[t] for t in steps))
        return TemporalAttributedGraph(self.features[steps], self.labels[steps],
                                       tuple(sim), self.coords)

    def masked(self, mask):
        """Copy with labels removed wherever `mask` is not observed."""
        y = np.where(mask.observed, self.labels, np.nan)
        return self.replace(labels=y)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Observed/missing indicator per (step, node)."""

    observed: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.observed, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must have shape (n_steps, n_nodes)")
        object.__setattr__(self, "observed", _readonly(m))

    @classmethod
    def from_labels(cls, labels):
        return cls(~np.isnan(np.asarray(labels, dtype=float)))

    @classmethod
    def full(cls, n_steps, n_nodes):
        return cls(np.ones((n_steps, n_nodes), dtype=bool))

    @property
    def shape(self):
        return self.observed.shape

    @property
    def n_labeled(self):
        return int(self.observed.sum())

    def labeled_index(self):
        return np.flatnonzero(self.observed.ravel())

    def unlabeled_index(self):
        return np.flatnonzero(~self.observed.ravel())


@dataclass(frozen=True, eq=False)
class GcrfParams:
    """Association weights alpha (K) and interaction weights beta (L), log domain."""

    log_alpha: np.ndarray
    log_beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "log_alpha", _readonly(np.atleast_1d(np.asarray(self.log_alpha, dtype=float))))
        object.__setattr__(self, "log_beta", _readonly(np.atleast_1d(np.asarray(self.log_beta, dtype=float))))

    @classmethod
    def from_values(cls, alpha, beta):
        return cls(np.log(alpha), np.log(beta))

    @classmethod
    def initial(cls, n_predictors, n_layers):
        return cls(np.zeros(n_predictors), np.zeros(n_layers))

    @classmethod
    def from_vector(cls, theta, n_predictors):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:n_predictors], theta[n_predictors:])

    @property
    def alpha(self):
        return np.exp(self.log_alpha)

    @property
    def beta(self):
        return np.exp(self.log_beta)

    @property
    def n_predictors(self):
        return self.log_alpha.size

    @property
    def n_layers(self):
        return self.log_beta.size

    def vector(self):
        return np.concatenate([self.log_alpha, self.log_beta])


@dataclass(frozen=True, eq=False)
class PrecisionSystem:
    """Block-diagonal precision ``Q`` (one sparse block per step) and linear term ``b``."""

    blocks: tuple
    b: np.ndarray

    @property
    def n_steps(self):
        return len(self.blocks)

    @property
    def block_size(self):
        return self.blocks[0].shape[0]

    @property
    def Q(self):
        return sp.block_diag(self.blocks, format="csr")

    def block_b(self, t):
        n = self.block_size
        return self.b[t * n:(t + 1) * n]


def as_predictions(r, n_steps, n_nodes):
    """Normalize unstructured predictions to shape (K, n_steps, n_nodes)."""
    r = np.asarray(r, dtype=float)
    if r.ndim == 1:
        r = r[None]
    if r.ndim == 2:
        if r.shape[1] != n_steps * n_nodes:
            raise ValueError(f"predictions have length {r.shape[1]}, expected {n_steps * n_nodes}")
        r = r.reshape(r.shape[0], n_steps, n_nodes)
    if r.shape[1:] != (n_steps, n_nodes):
        raise ValueError(f"predictions have shape {r.shape}, expected (K, {n_steps}, {n_nodes})")
    if not np.isfinite(r).all():
        raise ValueError("unstructured predictions must be finite")
    return r


def precision_block(laplacians, alpha, beta):
    n = laplacians[0].shape[0]
    Q = sp.identity(n, format="csr") * (2.0 * float(np.sum(alpha)))
    for lap, bl in zip(laplacians, beta):
        Q = Q + (2.0 * bl) * lap
    return sp.csr_matrix(Q)


def assemble_precision(graph, params, r):
    """Precision blocks ``2 sum(alpha) I + 2 sum_l beta_l Lap_l`` and ``b = 2 sum_k alpha_k R_k``."""
    r = as_predictions(r, graph.n_steps, graph.n_nodes)
    if params.n_predictors != r.shape[0]:
        raise ValueError(f"{params.n_predictors} alpha weights for {r.shape[0]} predictors")
    if params.n_layers != graph.n_layers:
        raise ValueError(f"{params.n_layers} beta weights for {graph.n_layers} similarity layers")
    alpha, beta = params.alpha, params.beta
    blocks = []
    for t in range(graph.n_steps):
        blocks.append(precision_block(graph.laplacians(t), alpha, beta))
    b = 2.0 * np.tensordot(alpha, r, axes=1).ravel()
    return PrecisionSystem(tuple(blocks), b)


class Partition(NamedTuple):
    QLL: sp.csr_matrix
    QLU: sp.csr_matrix
    QUL: sp.csr_matrix
    QUU: sp.csr_matrix
    bL: np.ndarray
    bU: np.ndarray


def partition(mask, system):
    """Split ``Q`` and ``b`` into labeled/unlabeled blocks (flat time-major indices)."""
    Q = system.Q
    if mask.observed.size != Q.shape[0]:
        raise ValueError("mask does not cover the system")
    L, U = mask.labeled_index(), mask.unlabeled_index()
    QL, QU = Q[L], Q[U]
    return Partition(QL[:, L], QL[:, U], QU[:, L], QU[:, U], system.b[L], system.b[U])


def weighted_degree(graph, node, step):
    """Total incident edge weight of `node` at `step`, summed over layers."""
    return float(sum(layer[step][node].sum() for layer in graph.similarity))


def weighted_degrees(graph, step):
    return np.asarray(graph.combined_similarity(step).sum(axis=1)).ravel()


def grid_similarity(rows, cols, weights=None):
    """4-neighbour grid similarity; `weights` maps each edge (in ``grid_edges`` order) to a weight."""
    i, j = grid_edges(rows, cols)
    w = np.ones(i.size) if weights is None else np.asarray(weights, dtype=float)
    n = rows * cols
    S = sp.coo_matrix((w, (i, j)), shape=(n, n))
    return (S + S.T).tocsr()


def grid_edges(rows, cols):
    """Node pairs of the 4-neighbour grid, node ``r * cols + c`` at (row r, col c)."""
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    vert = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    return np.concatenate([horiz[0], vert[0]]), np.concatenate([horiz[1], vert[1]])


def grid_coords(rows, cols):
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([r, c])


def masked_labels(graph, mask, labels_L=None):
    """(steps, nodes) label array holding values only where `mask` is observed.

    `labels_L`, if given, supplies the observed values in flat time-major
    order; otherwise the graph's own labels are used.
    """
    if mask.shape != (graph.n_steps, graph.n_nodes):
        raise ValueError("mask shape does not match the graph")
    if labels_L is None:
        return np.where(mask.observed, graph.labels, np.nan)
    labels_L = np.asarray(labels_L, dtype=float).ravel()
    if labels_L.size != mask.n_labeled:
        raise ValueError(f"{labels_L.size} labels for {mask.n_labeled} observed entries")
    y = np.full(graph.n_steps * graph.n_nodes, np.nan)
    y[mask.labeled_index()] = labels_L
    return y.reshape(graph.n_steps, graph.n_nodes)
