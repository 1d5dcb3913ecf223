#!/usr/bin/env python3
"""Why the location probabilities settle on the truth.

Under each hypothesis the stacked outputs are zero-mean Gaussian with a
computable covariance.  Positive KL divergence between the true hypothesis's
covariance and every wrong one means the data favor the truth on average;
the empirical counterpart is the cumulative log evidence ratio, which should
drift upward along a run.  Both are shown here for the tracking scenario.
"""

import numpy as np

import ssue

scn = ssue.tracking_preset()
model = scn.model
labels = model.locations.labels

grid = ssue.DeltaGrid(values=[scn.true_delta])
D = ssue.kl_separation(model, grid, k=20, x_ref=scn.x0_truth)
print(f"KL divergence matrix at delta={scn.true_delta}, horizon 20:")
print("        " + "  ".join(f"{lab:>8}" for lab in labels))
for t in range(model.M):
    print(f"{labels[t]:>6}  " + "  ".join(f"{D[t, i]:8.4f}" for i in range(model.M)))
print("row = true hypothesis; every off-diagonal entry in the A2 row is")
print("positive, so data generated under A2 separate it from the alternatives.\n")

n_seeds = 10
print(f"cumulative log evidence ratios, mean over {n_seeds} seeds:")
trajs = {0: [], 2: []}
for s in range(n_seeds):
    record = ssue.run_estimation(ssue.tracking_preset(seed=3000 + s))
    for wrong in trajs:
        trajs[wrong].append(ssue.loglik_ratio_trajectory(record, 1, wrong))

print("step    log[p(Y|A2)/p(Y|A1)]   log[p(Y|A2)/p(Y|A3)]")
for k in [49, 99, 149, 199, 249, 299]:
    m1 = np.mean([t[k] for t in trajs[0]])
    m3 = np.mean([t[k] for t in trajs[2]])
    print(f"{k + 1:4d}      {m1:12.2f}          {m3:12.2f}")
print("\nBoth ratios grow with more data: the true location accumulates")
print("evidence against each rival, which is what drives mu_2 toward 1.")
