"""Fully supervised GCRF: likelihood, analytic gradients, training, inference.

The per-step objective below is written for a block whose labels may be
partially missing; with every label present it is exactly the conditional
log-likelihood of the GCRF, and the marginalized model in
:mod:`mgcrf.marginal` reuses it with missing labels integrated out.

For a block with precision ``Q``, linear term ``b`` and mean ``mu = Q^{-1} b``,
labeled residual ``r = y_L - mu_L`` and ``w = Q_UU^{-1} Q_UL r``, set
``z = [r; -w]``.  Then ``z = Q^{-1} [Q* r; 0]`` with ``Q*`` the Schur complement
of ``Q_UU``, and for any parameter ``theta``::

    log p(y_L) = -1/2 z'Qz + 1/2 (logdet Q - logdet Q_UU) - |L|/2 log(2 pi)
    d log p    = -1/2 z' dQ z + z'(db - dQ mu)
                 + 1/2 (tr(Q^{-1} dQ) - tr(Q_UU^{-1} dQ_UU))

``z' dQ z`` is the contraction of the total derivative of ``Q*`` with ``r``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .graph import (GcrfParams, LabelMask, PrecisionSystem, as_predictions,
                    assemble_precision, precision_block)
from .linalg import BandedCholesky, NotPositiveDefiniteError, rcm_order

LOG_2PI = math.log(2.0 * math.pi)


class FitError(RuntimeError):
    """Training hit a non-finite objective or a degenerate input."""


class SolverError(RuntimeError):
    """A linear solve missed its residual contract."""


@dataclass
class OptimizerSettings:
    memory: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    init: Optional[GcrfParams] = None


@dataclass(frozen=True)
class FitInfo:
    iterations: int
    evaluations: int
    converged: bool
    grad_norm: float
    history: tuple
    message: str = ""


@dataclass(frozen=True, eq=False)
class GcrfModel:
    params: GcrfParams
    info: Optional[FitInfo] = field(default=None, compare=False)

    @property
    def predictor_count(self):
        return self.params.n_predictors

    @property
    def layer_count(self):
        return self.params.n_layers


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Mean ``mu = Q^{-1} b`` (flat, time-major) with the precision it came from."""

    mean: np.ndarray
    system: PrecisionSystem

    @property
    def precision(self):
        return self.system.Q

    def mean_by_step(self):
        return self.mean.reshape(self.system.n_steps, self.system.block_size)


def _as_params(model):
    return model.params if isinstance(model, GcrfModel) else model


class Block:
    """One time step prepared for repeated objective evaluations."""

    def __init__(self, laplacians, R, y, observed):
        self.laplacians = [sp.csr_matrix(lap) for lap in laplacians]
        self.n = self.laplacians[0].shape[0]
        self.R = np.asarray(R, dtype=float).reshape(-1, self.n)
        self.observed = np.asarray(observed, dtype=bool)
        self.L = np.flatnonzero(self.observed)
        self.U = np.flatnonzero(~self.observed)
        self.y_L = np.asarray(y, dtype=float)[self.L]
        if np.isnan(self.y_L).any():
            raise ValueError("observed labels must not be NaN")
        pattern = sp.identity(self.n, format="csr")
        for lap in self.laplacians:
            pattern = pattern + abs(lap)
        self.perm = rcm_order(pattern)
        self.lap_coo = [sp.coo_matrix(lap) for lap in self.laplacians]
        if self.U.size and self.L.size:
            self.perm_uu = rcm_order(pattern[self.U][:, self.U])
            self.lap_uu_coo = [sp.coo_matrix(lap[self.U][:, self.U]) for lap in self.laplacians]

    @property
    def n_labeled(self):
        return self.L.size

    def precision(self, alpha, beta):
        return precision_block(self.laplacians, alpha, beta)

    def evaluate(self, alpha, beta, grad=True):
        """Log-likelihood of the labeled entries and its gradient in (alpha, beta)."""
        K, nl = alpha.size, beta.size
        if self.L.size == 0:
            # the block marginalizes out completely
            return 0.0, np.zeros(K), np.zeros(nl)
        Q = self.precision(alpha, beta).tocsr()
        b = 2.0 * (alpha @ self.R)
        fac = BandedCholesky(Q, self.perm)
        mu = fac.solve(b)
        r = self.y_L - mu[self.L]
        if self.U.size:
            Q_UU = Q[self.U][:, self.U]
            fac_uu = BandedCholesky(Q_UU, self.perm_uu)
            w = fac_uu.solve(Q[self.U][:, self.L] @ r)
            z = np.empty(self.n)
            z[self.L] = r
            z[self.U] = -w
            logdet = fac.logdet() - fac_uu.logdet()
        else:
            fac_uu = None
            z = r
            logdet = fac.logdet()
        quad = float(z @ (Q @ z))
        ll = -0.5 * quad + 0.5 * logdet - 0.5 * self.L.size * LOG_2PI
        if not grad:
            return ll, None, None

        zz = float(z @ z)
        tr_inv = float(fac.diag_inverse().sum())
        if fac_uu is not None:
            tr_inv -= float(fac_uu.diag_inverse().sum())
        g_alpha = -zz + 2.0 * (self.R @ z - mu @ z) + tr_inv

        g_beta = np.empty(nl)
        for l, lap in enumerate(self.laplacians):
            lap_mu = lap @ mu
            tr = fac.trace_product(self.lap_coo[l])
            if fac_uu is not None:
                tr -= fac_uu.trace_product(self.lap_uu_coo[l])
            g_beta[l] = -float(z @ (lap @ z)) - 2.0 * float(z @ lap_mu) + tr
        return ll, g_alpha, g_beta


def graph_blocks(graph, r, labels=None, mask=None):
    """Blocks for every step of `graph`; labels default to the graph's own."""
    y = graph.labels if labels is None else np.asarray(labels, dtype=float).reshape(graph.n_steps, graph.n_nodes)
    observed = ~np.isnan(y) if mask is None else mask.observed
    if observed.shape != (graph.n_steps, graph.n_nodes):
        raise ValueError("mask shape does not match the graph")
    if np.isnan(y[observed]).any():
        raise ValueError("labels must be present wherever the mask is observed")
    r = as_predictions(r, graph.n_steps, graph.n_nodes)
    return [Block(graph.laplacians(t), r[:, t], y[t], observed[t]) for t in range(graph.n_steps)]


def _check_dims(params, blocks):
    if params.n_predictors != blocks[0].R.shape[0]:
        raise ValueError(f"{params.n_predictors} alpha weights for {blocks[0].R.shape[0]} predictors")
    if params.n_layers != len(blocks[0].laplacians):
        raise ValueError(f"{params.n_layers} beta weights for {len(blocks[0].laplacians)} layers")


def blocks_log_likelihood(blocks, params):
    _check_dims(params, blocks)
    alpha, beta = params.alpha, params.beta
    return sum(blk.evaluate(alpha, beta, grad=False)[0] for blk in blocks)


def blocks_value_and_gradient(blocks, params):
    """Log-likelihood and gradient w.r.t. (log_alpha, log_beta)."""
    _check_dims(params, blocks)
    alpha, beta = params.alpha, params.beta
    ll = 0.0
    ga = np.zeros(alpha.size)
    gb = np.zeros(beta.size)
    for blk in blocks:
        v, a, b = blk.evaluate(alpha, beta)
        ll += v
        ga += a
        gb += b
    return ll, ga * alpha, gb * beta


def _require_complete(graph, labels):
    y = graph.labels if labels is None else np.asarray(labels, dtype=float)
    if np.isnan(y).any():
        raise ValueError("all labels must be present; use mgcrf.marginal for missing labels")
    return y


def log_likelihood(model, graph, r, labels=None):
    """Conditional log-likelihood ``log P(y | X)`` with every label observed."""
    y = _require_complete(graph, labels)
    return blocks_log_likelihood(graph_blocks(graph, r, y), _as_params(model))


def gradient(model, graph, r, labels=None):
    """Gradient of :func:`log_likelihood` w.r.t. ``(log_alpha, log_beta)``."""
    y = _require_complete(graph, labels)
    _, ga, gb = blocks_value_and_gradient(graph_blocks(graph, r, y), _as_params(model))
    return ga, gb


def maximize(blocks, settings=None):
    """Maximize the summed block log-likelihood with L-BFGS in log-parameter space.

    The objective is divided by the number of labeled entries, which leaves
    the maximizer unchanged and keeps step sizes comparable across graphs.
    """
    settings = settings or OptimizerSettings()
    K, nl = blocks[0].R.shape[0], len(blocks[0].laplacians)
    init = settings.init or GcrfParams.initial(K, nl)
    _check_dims(init, blocks)
    scale = sum(blk.n_labeled for blk in blocks)
    if scale == 0:
        raise FitError("no labeled entries to fit")
    counter = {"evals": 0}

    def objective(theta):
        counter["evals"] += 1
        params = GcrfParams.from_vector(theta, K)
        try:
            ll, ga, gb = blocks_value_and_gradient(blocks, params)
        except NotPositiveDefiniteError:
            return np.inf, np.zeros_like(theta)
        g = np.concatenate([ga, gb])
        if not (np.isfinite(ll) and np.isfinite(g).all()):
            return np.inf, np.zeros_like(theta)
        return -ll / scale, -g / scale

    theta0 = init.vector()
    f0, _ = objective(theta0)
    if not np.isfinite(f0):
        raise FitError("objective is not finite at the initial point")
    history = [-f0 * scale]

    def callback(intermediate_result):
        history.append(-float(intermediate_result.fun) * scale)

    res = scipy.optimize.minimize(
        objective, theta0, jac=True, method="L-BFGS-B", callback=callback,
        options=dict(maxcor=settings.memory, maxiter=settings.max_iter,
                     gtol=settings.tol, ftol=1e-15, maxls=40))
    if not np.isfinite(res.fun):
        raise FitError(f"optimizer ended at a non-finite objective: {res.message}")
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac.size else 0.0
    info = FitInfo(iterations=int(res.nit), evaluations=counter["evals"],
                   converged=grad_norm <= settings.tol, grad_norm=grad_norm,
                   history=tuple(history), message=str(res.message))
    return GcrfModel(GcrfParams.from_vector(res.x, K), info)


def fit(graph, r, labels=None, settings=None):
    """Train a GCRF on a fully labeled graph by maximizing the conditional likelihood."""
    y = _require_complete(graph, labels)
    return maximize(graph_blocks(graph, r, y), settings)


def solve_mean(system):
    """``mu = Q^{-1} b`` block by block, checked to relative residual 1e-8."""
    n = system.block_size
    mean = np.empty_like(system.b)
    for t, Q in enumerate(system.blocks):
        b = system.block_b(t)
        try:
            mu = BandedCholesky(Q).solve(b)
        except NotPositiveDefiniteError as exc:
            raise SolverError(f"precision block {t} is not positive definite") from exc
        resid = np.linalg.norm(Q @ mu - b)
        if resid > 1e-8 * max(np.linalg.norm(b), 1e-300):
            raise SolverError(f"residual {resid:.3g} too large in block {t}")
        mean[t * n:(t + 1) * n] = mu
    return mean


def predict(model, graph, r):
    """Posterior mean (the MAP labeling) for every node at every step."""
    system = assemble_precision(graph, _as_params(model), r)
    return GaussianPosterior(solve_mean(system), system)
