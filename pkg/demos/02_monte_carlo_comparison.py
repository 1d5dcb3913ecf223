#!/usr/bin/env python3
"""Monte Carlo comparison against the EKF baseline.

Twenty seeded repetitions of the tracking scenario: how often the true
perturbation location wins the probability race, how close the final delta
estimate lands, and the per-state RMSE of the fused estimate versus an EKF
that pretends delta = 0.
"""

import numpy as np

import ssue

n_runs = 20
scenario = ssue.tracking_preset()
summary = ssue.monte_carlo(scenario, n_runs=n_runs, seed_base=1000)

print(f"{n_runs} runs of {scenario.steps} steps (seeds 1000..{1000 + n_runs - 1})\n")
print(f"identification success rate: {summary.success_rate:.0%}")
print(f"median final |delta error| : {summary.median_final_delta_error:.4f}")

print("\nmean RMSE per state   px      py      vx      vy")
print("  filter          ", "  ".join(f"{v:6.3f}" for v in summary.rmse_ssue_mean))
print("  EKF             ", "  ".join(f"{v:6.3f}" for v in summary.rmse_ekf_mean))
print("  filter wins     ", "  ".join(f"{v:6.0%}" for v in summary.ssue_beats_ekf_rate))

vel_wins = [np.sqrt(np.mean(r.rmse_ssue[2:] ** 2)) < np.sqrt(np.mean(r.rmse_ekf[2:] ** 2))
            for r in summary.per_run]
print(f"\nvelocity RMSE lower than EKF in {np.mean(vel_wins):.0%} of runs")

losers = [r.seed for r in summary.per_run if not r.success]
if losers:
    print(f"runs that misidentified the location: seeds {losers}")
if summary.failures:
    print("failed runs:", summary.failures)
