"""Synthetic grid graphs labeled by sampling from a known GCRF.

Per step, random feature tuples are pushed through a fixed random teacher
network (evaluated on noise-perturbed copies of the inputs), placed on a
grid so the teacher output grows from the lower-left corner (row 0, col 0)
to the upper-right corner, and labeled with an exact draw from the GCRF
whose unstructured predictor is the teacher output.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .gcrf import GcrfModel, solve_mean
from .graph import (GcrfParams, PrecisionSystem, TemporalAttributedGraph,
                    assemble_precision, grid_coords, grid_edges, grid_similarity)
from .linalg import BandedCholesky, NotPositiveDefiniteError
from .nn import FeedForwardRegressor

INPUT_RANGE = (0.01, 0.1)
TEACHER_INPUT_GAIN = 30.0
TEACHER_OUTPUT_SCALE = 0.5
TEACHER_OUTPUT_CENTER = 21.0


@dataclass(frozen=True)
class SyntheticSpec:
    rows: int = 40
    cols: int = 40
    n_steps: int = 5
    noise_fraction: float = 0.10
    weight_range: tuple = (0.5, 1.0)
    seed: int = 0
    alpha: float = 1.0
    beta: float = 5.0
    n_features: int = 30
    hidden: int = 60

    def __post_init__(self):
        if self.rows * self.cols < 4:
            raise ValueError("grid needs at least 4 cells")
        if self.n_steps < 2:
            raise ValueError("need at least 2 steps (train + test)")
        lo, hi = self.weight_range
        if not 0 < lo <= hi:
            raise ValueError("weight range must lie in (0, inf)")
        if self.noise_fraction < 0:
            raise ValueError("noise fraction must be nonnegative")
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("generator needs alpha > 0 and beta >= 0")


class SyntheticDataset(NamedTuple):
    graph: TemporalAttributedGraph
    generator: GcrfModel
    teacher: FeedForwardRegressor
    teacher_output: np.ndarray  # (1, n_steps, n_nodes), the generator's R


def make_teacher(rng, n_features=30, hidden=60):
    """Random sigmoid network whose hidden units are active over the input box."""
    lo, hi = INPUT_RANGE
    W1 = rng.normal(0.0, TEACHER_INPUT_GAIN, (n_features, hidden))
    center = np.full(n_features, 0.5 * (lo + hi))
    b1 = -center @ W1 + rng.normal(0.0, 0.5, hidden)
    w2 = rng.normal(0.0, TEACHER_OUTPUT_SCALE, hidden)
    b2 = TEACHER_OUTPUT_CENTER - 0.5 * w2.sum()
    return FeedForwardRegressor(W1, b1, w2, float(b2))


def placement_order(rows, cols):
    """Cells ranked by anti-diagonal (row + col), ties by row."""
    rc = grid_coords(rows, cols)
    return np.lexsort((rc[:, 0], rc[:, 0] + rc[:, 1]))


def sample_labels(system, seed):
    """Exact draw from ``N(Q^{-1} b, Q^{-1})``, one Cholesky per block."""
    rng = np.random.default_rng(seed)
    n = system.block_size
    out = np.empty_like(system.b)
    for t, Q in enumerate(system.blocks):
        fac = BandedCholesky(Q)
        mu = fac.solve(system.block_b(t))
        out[t * n:(t + 1) * n] = mu + fac.sample(rng.standard_normal(n))
    return out


def generate(spec):
    rng = np.random.default_rng(spec.seed)
    teacher = make_teacher(rng, spec.n_features, spec.hidden)
    N = spec.rows * spec.cols
    cells = placement_order(spec.rows, spec.cols)
    lo, hi = INPUT_RANGE
    X = np.empty((spec.n_steps, N, spec.n_features))
    R = np.empty((spec.n_steps, N))
    for t in range(spec.n_steps):
        x = rng.uniform(lo, hi, (N, spec.n_features))
        noisy = x * (1.0 + spec.noise_fraction * rng.uniform(-1.0, 1.0, x.shape))
        out = teacher(noisy)
        order = np.argsort(out, kind="stable")
        X[t, cells] = x[order]
        R[t, cells] = out[order]

    i, _ = grid_edges(spec.rows, spec.cols)
    weights = rng.uniform(*spec.weight_range, i.size)
    S = grid_similarity(spec.rows, spec.cols, weights)
    graph = TemporalAttributedGraph(X, np.full((spec.n_steps, N), np.nan), (S,),
                                    coords=grid_coords(spec.rows, spec.cols))
    with np.errstate(divide="ignore"):
        generator = GcrfModel(GcrfParams(np.log([spec.alpha]), np.log([spec.beta])))
    system = assemble_precision(graph, generator.params, R[None])
    y = sample_labels(system, rng.integers(2**63)).reshape(spec.n_steps, N)
    return SyntheticDataset(graph.replace(labels=y), generator, teacher, R[None])
