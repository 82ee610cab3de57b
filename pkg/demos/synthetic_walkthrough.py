"""Generate a synthetic grid, hide labels, and compare the GCRF variants on the last step.

    python3 demos/synthetic_walkthrough.py
"""

import numpy as np

from mgcrf import baselines, gcrf
from mgcrf.graph import LabelMask
from mgcrf.harness import r2_score
from mgcrf.marginal import fit_marginal
from mgcrf.missingness import Kind, Mechanism, apply
from mgcrf.synth import SyntheticSpec, generate

ds = generate(SyntheticSpec(rows=20, cols=20, n_steps=5, seed=1))
g, r = ds.graph, ds.teacher_output
print(f"{g.n_nodes} nodes, {g.n_steps} steps, label std {np.std(g.labels):.3f}")

train, test = g.subset_steps([0, 1, 2, 3]), g.subset_steps([4])
r_train, r_test = r[:, :4], r[:, 4:]
y = test.labels[0]
print(f"teacher output alone: R2 = {r2_score(y, r_test[0, 0]):.3f}")

# fully labeled refit
model = gcrf.fit(train, r_train)
print(f"full fit: alpha {model.params.alpha[0]:.3f} beta {model.params.beta[0]:.3f}, "
      f"R2 = {r2_score(y, gcrf.predict(model, test, r_test).mean):.3f}")

# hide 30% of the nodes in every training step
mask = apply(Mechanism(Kind.STRONGLY_CONNECTED, 0.3, seed=1), train, range(4))
print(f"hiding {(~mask.observed).sum()} of {mask.observed.size} training labels")
for name, fitted in [("m-GCRF", fit_marginal(train, r_train, mask)),
                     ("i-GCRF", baselines.fit_igcrf(train, r_train, mask)),
                     ("HGF-GCRF", baselines.fit_hgf_gcrf(train, r_train, mask))]:
    pred = gcrf.predict(fitted, test, r_test).mean
    print(f"{name:<9} beta/alpha {fitted.params.beta[0] / fitted.params.alpha[0]:7.3f}  R2 = {r2_score(y, pred):.3f}")
