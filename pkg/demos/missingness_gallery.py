"""Print which grid cells each missingness mechanism hides on a small grid.

    python3 demos/missingness_gallery.py
"""

import warnings

import numpy as np

from mgcrf.missingness import FallbackWarning, Kind, Mechanism, estimate_natural_distribution, select_nodes
from mgcrf.synth import SyntheticSpec, generate

rows, cols = 8, 12
g = generate(SyntheticSpec(rows=rows, cols=cols, n_steps=3, seed=4)).graph
history = np.random.default_rng(0).random((30, g.n_nodes)) > np.linspace(0.05, 0.6, g.n_nodes)
probs = estimate_natural_distribution(history)

for kind in Kind:
    mech = Mechanism(kind, 0.25, seed=3, probabilities=probs if kind is Kind.NATURAL_DISTRIBUTION else None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FallbackWarning)
        sel = select_nodes(mech, g, [0, 1])
    grid = np.full(g.n_nodes, ".")
    grid[sel.nodes] = "#"
    print(f"{kind.value}{' (fallback)' if sel.fallback else ''}")
    for row in grid.reshape(rows, cols):
        print("  " + " ".join(row))
    print()
