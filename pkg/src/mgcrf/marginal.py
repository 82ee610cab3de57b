"""Marginalized GCRF: train on labeled nodes with unlabeled ones integrated out.

The labeled subvector of a GCRF is Gaussian with mean ``mu_L`` (the labeled
part of the full mean) and precision equal to the Schur complement
``Q* = Q_LL - Q_LU Q_UU^{-1} Q_UL``.  Training maximizes that marginal
density, so unlabeled nodes still contribute their features and edges.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .gcrf import (_as_params, blocks_log_likelihood,
                   blocks_value_and_gradient, graph_blocks, maximize, predict)
from .graph import LabelMask, masked_labels
from .linalg import BandedCholesky, NotPositiveDefiniteError


@dataclass(frozen=True, eq=False)
class MarginalSystem:
    """Schur-complement precision over labeled indices and the labeled mean.

    ``blocks[t]`` is the dense precision of the labeled nodes at step ``t``;
    ``labeled_index`` lists the flat (time-major) indices in ``mu_L`` order.
    """

    blocks: tuple
    mu_L: np.ndarray
    labeled_index: np.ndarray

    @property
    def Q_star(self):
        nonempty = [B for B in self.blocks if B.size]
        if not nonempty:
            return np.zeros((0, 0))
        return scipy.linalg.block_diag(*nonempty)


def _mask_for(graph, mask):
    mask = LabelMask.from_labels(graph.labels) if mask is None else mask
    if mask.n_labeled == 0:
        raise ValueError("no labeled entries")
    return mask


def marginalize(system, mask):
    """Schur complement of the unlabeled block, one step at a time."""
    n = system.block_size
    observed = mask.observed.reshape(system.n_steps, n)
    if not observed.any():
        raise ValueError("cannot marginalize: no labeled entries")
    blocks, means = [], []
    for t, Q in enumerate(system.blocks):
        Q = sp.csr_matrix(Q)
        L = np.flatnonzero(observed[t])
        U = np.flatnonzero(~observed[t])
        mu = BandedCholesky(Q).solve(system.block_b(t))
        means.append(mu[L])
        Q_LL = Q[L][:, L].toarray()
        if U.size == 0 or L.size == 0:
            blocks.append(Q_LL)
            continue
        try:
            fac_uu = BandedCholesky(Q[U][:, U])
        except NotPositiveDefiniteError as exc:
            raise NotPositiveDefiniteError(f"Q_UU of block {t} is not positive definite") from exc
        Q_UL = Q[U][:, L].toarray()
        X = fac_uu.solve(Q_UL)
        blocks.append(Q_LL - Q_UL.T @ X)
    return MarginalSystem(tuple(blocks), np.concatenate(means), mask.labeled_index())


def marginal_log_likelihood(model, graph, r, mask=None, labels_L=None):
    """Gaussian log-density of the observed labels with missing ones integrated out.

    `labels_L` overrides the graph's labels at the observed positions, in
    flat time-major order; by default the graph's own labels are used.
    """
    mask = _mask_for(graph, mask)
    blocks = graph_blocks(graph, r, masked_labels(graph, mask, labels_L), mask)
    return blocks_log_likelihood(blocks, _as_params(model))


def marginal_gradient(model, graph, r, mask=None, labels_L=None):
    """Gradient of :func:`marginal_log_likelihood` w.r.t. ``(log_alpha, log_beta)``."""
    mask = _mask_for(graph, mask)
    blocks = graph_blocks(graph, r, masked_labels(graph, mask, labels_L), mask)
    _, ga, gb = blocks_value_and_gradient(blocks, _as_params(model))
    return ga, gb


def fit_marginal(graph, r, mask=None, settings=None, labels_L=None):
    """Train by maximizing the marginal likelihood of the labeled nodes (m-GCRF)."""
    mask = _mask_for(graph, mask)
    blocks = graph_blocks(graph, r, masked_labels(graph, mask, labels_L), mask)
    return maximize(blocks, settings)


def predict_full(model, graph, r):
    """Posterior mean at every node, labeled in training or not."""
    return predict(model, graph, r)


