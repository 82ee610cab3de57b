"""Label-removal mechanisms.

Every mechanism selects ``ceil(fraction * N)`` nodes and removes their
labels at all training steps; labels at other steps are untouched.
"""

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, shortest_path

from .graph import LabelMask


class FallbackWarning(UserWarning):
    """A mechanism could not meet its constraint and fell back to a simpler rule."""


class Kind(str, enum.Enum):
    RANDOM = "Random"
    WEAKLY_CONNECTED = "WeaklyConnected"
    STRONGLY_CONNECTED = "StronglyConnected"
    STRONGLY_CONNECTED_EXCL_NEIGHBORS = "StronglyConnectedExclNeighbors"
    MID_RANGE_Y = "MidRangeY"
    REMOTE_NEIGHBORHOOD = "RemoteNeighborhood"
    EXTREME_Y = "ExtremeY"
    NATURAL_DISTRIBUTION = "NaturalDistribution"

    @classmethod
    def parse(cls, name):
        key = str(name).strip().replace("-", "").replace("_", "").replace(" ", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown missingness mechanism {name!r}")


@dataclass(frozen=True)
class Mechanism:
    kind: Kind
    fraction: float
    seed: int = 0
    probabilities: Optional[np.ndarray] = None  # NaturalDistribution only

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind) if not isinstance(self.kind, Kind) else self.kind)
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError("fraction must lie in [0, 1)")
        if self.kind is Kind.NATURAL_DISTRIBUTION and self.probabilities is None:
            raise ValueError("NaturalDistribution needs a per-node probability vector")


@dataclass(frozen=True)
class Selection:
    nodes: np.ndarray
    fallback: bool = False


def n_selected(fraction, n_nodes):
    # guard against 0.1 * 30 = 3.0000000000000004
    return min(n_nodes, math.ceil(round(fraction * n_nodes, 9)))


def _degrees(graph, train_steps):
    from .graph import weighted_degrees
    return np.mean([weighted_degrees(graph, t) for t in train_steps], axis=0)


def _adjacency(graph, train_steps):
    W = graph.combined_similarity(train_steps[0])
    for t in train_steps[1:]:
        W = W + graph.combined_similarity(t)
    return W.tocsr()


def _mean_labels(graph, train_steps):
    y = graph.labels[list(train_steps)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(y, axis=0)


def _nearest(values, target, candidates=None):
    idx = np.arange(values.size) if candidates is None else np.asarray(candidates)
    ok = idx[~np.isnan(values[idx])]
    return int(ok[np.argmin(np.abs(values[ok] - target))])


def _bfs_take(adj, seed, k):
    """First `k` nodes by (hop distance from seed, index); unreachable nodes last."""
    dist = shortest_path(adj, unweighted=True, indices=seed, directed=False)
    dist = np.where(np.isfinite(dist), dist, np.inf)
    order = np.lexsort((np.arange(dist.size), dist))
    return order[:k]


def bfs_seed(kind, graph, train_steps):
    """Start node for the neighborhood-growth mechanisms."""
    if graph.coords is not None:
        rows, cols = graph.coords[:, 0], graph.coords[:, 1]
        if kind is Kind.MID_RANGE_Y:
            center = np.array([(rows.max() + rows.min()) / 2, (cols.max() + cols.min()) / 2])
            d = np.abs(graph.coords - center).sum(axis=1)
            return int(np.lexsort((np.arange(d.size), d))[0])
        if kind is Kind.REMOTE_NEIGHBORHOOD:
            # upper-left corner: top row, first column
            key = np.lexsort((np.arange(rows.size), cols, -rows))
            return int(key[0])
        if kind is Kind.EXTREME_Y:
            key = np.lexsort((np.arange(rows.size), -(rows + cols)))
            return int(key[0])
    ybar = _mean_labels(graph, train_steps)
    if np.isnan(ybar).all():
        raise ValueError("no grid coordinates and no training labels to place a seed")
    if kind is Kind.EXTREME_Y:
        return int(np.nanargmax(ybar))
    mid = _nearest(ybar, np.nanmedian(ybar))
    if kind is Kind.MID_RANGE_Y:
        return mid
    # peripheral node among the middle tercile of label values
    lo, hi = np.nanquantile(ybar, [1 / 3, 2 / 3])
    cand = np.flatnonzero((ybar >= lo) & (ybar <= hi))
    dist = shortest_path(_adjacency(graph, train_steps), unweighted=True, indices=mid, directed=False)
    dist = np.where(np.isfinite(dist), dist, -1.0)
    return int(cand[np.lexsort((cand, -dist[cand]))[0]])


def select_nodes(mechanism, graph, train_steps):
    """Nodes whose labels the mechanism removes."""
    train_steps = list(train_steps)
    N = graph.n_nodes
    k = n_selected(mechanism.fraction, N)
    kind = mechanism.kind
    idx = np.arange(N)
    if k == 0:
        return Selection(np.zeros(0, dtype=int))
    if kind is Kind.RANDOM:
        rng = np.random.default_rng(mechanism.seed)
        return Selection(np.sort(rng.choice(N, size=k, replace=False)))
    if kind is Kind.NATURAL_DISTRIBUTION:
        p = np.asarray(mechanism.probabilities, dtype=float)
        if p.shape != (N,) or (p < 0).any() or p.sum() <= 0:
            raise ValueError("probabilities must be a nonnegative vector over nodes")
        p = p / p.sum()
        rng = np.random.default_rng(mechanism.seed)
        nz = np.count_nonzero(p)
        if nz >= k:
            return Selection(np.sort(rng.choice(N, size=k, replace=False, p=p)))
        rest = rng.choice(np.flatnonzero(p == 0), size=k - nz, replace=False)
        warnings.warn("natural distribution has too few supported nodes; padding uniformly",
                      FallbackWarning, stacklevel=2)
        return Selection(np.sort(np.concatenate([np.flatnonzero(p), rest])), fallback=True)
    if kind in (Kind.WEAKLY_CONNECTED, Kind.STRONGLY_CONNECTED, Kind.STRONGLY_CONNECTED_EXCL_NEIGHBORS):
        deg = _degrees(graph, train_steps)
        sign = 1.0 if kind is Kind.WEAKLY_CONNECTED else -1.0
        order = np.lexsort((idx, sign * deg))
        if kind is not Kind.STRONGLY_CONNECTED_EXCL_NEIGHBORS:
            return Selection(np.sort(order[:k]))
        adj = _adjacency(graph, train_steps)
        chosen, blocked = [], np.zeros(N, dtype=bool)
        for node in order:
            if len(chosen) == k:
                break
            if blocked[node]:
                continue
            chosen.append(node)
            blocked[adj.indices[adj.indptr[node]:adj.indptr[node + 1]]] = True
            blocked[node] = True
        fallback = len(chosen) < k
        if fallback:
            taken = set(chosen)
            chosen.extend([n for n in order if n not in taken][:k - len(chosen)])
            warnings.warn("independent set exhausted before reaching the fraction; "
                          "filled by descending degree", FallbackWarning, stacklevel=2)
        return Selection(np.sort(np.asarray(chosen, dtype=int)), fallback)
    seed = bfs_seed(kind, graph, train_steps)
    return Selection(np.sort(_bfs_take(_adjacency(graph, train_steps), seed, k)))


def apply(mechanism, graph, train_steps):
    """Mask that hides the selected nodes' labels at every training step."""
    sel = select_nodes(mechanism, graph, train_steps)
    observed = graph.observed.copy()
    for t in train_steps:
        observed[t, sel.nodes] = False
    return LabelMask(observed)


def estimate_natural_distribution(observed_history):
    """Per-node sampling distribution from add-one smoothed missingness counts.

    `observed_history` is a (steps, nodes) boolean array of observed labels.
    """
    hist = np.asarray(observed_history, dtype=bool)
    if hist.ndim != 2 or hist.shape[0] < 1:
        raise ValueError("history must be a (steps, nodes) array with at least one step")
    missing = (~hist).sum(axis=0) + 1.0
    return missing / missing.sum()
