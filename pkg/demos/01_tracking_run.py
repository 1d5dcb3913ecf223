#!/usr/bin/env python3
"""One tracking run, step by step.

A target moves in the plane while an unknown perturbation delta = -0.05
scales both position entries of its transition matrix (the second of three
candidate locations).  Three fixed sensors measure ranges only.  The filter
maintains one joint Gaussian over [delta; state] per candidate location and
reweights the candidates by their innovation likelihoods.
"""

import numpy as np

import ssue

scenario = ssue.tracking_preset(seed=42)
print(f"true location: index {scenario.true_loc_index} "
      f"({scenario.model.locations.labels[scenario.true_loc_index]}), "
      f"true delta: {scenario.true_delta}")
print(f"{scenario.steps} steps, Ts={scenario.Ts}s, seed={scenario.seed}\n")

record = ssue.run_estimation(scenario)

print("step   mu(A1)  mu(A2)  mu(A3)   delta_hat   |pos err|  |vel err|")
for k in [0, 4, 9, 29, 99, 199, 299]:
    pos_err = np.linalg.norm(record.fused_means[k, 1:3] - record.truth[k, :2])
    vel_err = np.linalg.norm(record.fused_means[k, 3:5] - record.truth[k, 2:])
    print(f"{k + 1:4d}   {record.mu[k, 0]:.3f}   {record.mu[k, 1]:.3f}   "
          f"{record.mu[k, 2]:.3f}   {record.fused_means[k, 0]:+.4f}    "
          f"{pos_err:7.3f}    {vel_err:6.3f}")

labels = scenario.model.locations.labels
print(f"\nidentified location: {labels[record.identified[-1]]}")
print(f"final delta estimate: {record.fused_means[-1, 0]:+.4f} "
      f"(truth {scenario.true_delta:+.4f})")

metrics = ssue.run_metrics(record)
print("\nper-state RMSE (px, py, vx, vy):")
print("  filter:", np.round(metrics.rmse_ssue, 3))
print("  EKF   :", np.round(metrics.rmse_ekf, 3))
print("\nThe EKF ignores the perturbation, so it must explain the position")
print("contraction through phantom velocity, which is where it loses accuracy.")
