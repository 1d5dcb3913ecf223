"""Config-driven command line front end.

Commands::

    ssue simulate      --config cfg.json [--seed N] [--steps N] [--out DIR]
    ssue estimate      --config cfg.json [--seed N] [--steps N] [--out DIR]
                       [--input RECORD_DIR] [--runs N]
    ssue observability --config cfg.json [--out DIR]
    ssue analyze       --config cfg.json --input RECORD_DIR [--out DIR]

The config file is a single JSON document; command line flags win over file
values.  Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 not observable on the grid at the tested horizon.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import kl_separation, linearized_C, loglik_ratio_trajectory
from .errors import ConfigurationError, ContractError, NumericalFailureError
from .filters import NewtonOptions
from .model import SystemModel, model_from_json, validate_model
from .observability import DeltaGrid, RankTolerance, pairwise_rank_test
from .sim import (
    RunRecord,
    Scenario,
    load_record,
    run_estimation,
    run_metrics,
    save_record,
    simulate,
    tracking_preset,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_OBSERVABLE = 4


def _scenario_from_config(cfg: dict) -> Scenario:
    scn = cfg.get("scenario")
    if not isinstance(scn, dict):
        raise ConfigurationError("config needs a 'scenario' object")
    if "model" in scn:
        model = model_from_json(json.dumps(scn["model"]))
        try:
            return Scenario(
                model=model,
                true_delta=scn["true_delta"],
                true_loc_index=scn["true_loc_index"],
                x0_truth=np.asarray(scn["x0_truth"], dtype=float),
                steps=int(scn["steps"]),
                seed=int(scn.get("seed", 0)),
                Ts=float(scn.get("Ts", 0.1)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"scenario is missing field {exc}") from exc
    preset_kwargs = {}
    for key in ("Ts", "q", "r", "sensors", "true_delta", "true_loc_index",
                "x0", "steps", "seed", "delta_domain", "P0"):
        if key in scn:
            preset_kwargs[key] = scn[key]
    try:
        return tracking_preset(**preset_kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad scenario field: {exc}") from exc


def _newton_from_config(cfg: dict) -> NewtonOptions:
    fields = cfg.get("newton", {})
    if not isinstance(fields, dict):
        raise ConfigurationError("'newton' must be an object")
    try:
        return NewtonOptions(**fields)
    except TypeError as exc:
        raise ConfigurationError(f"bad newton option: {exc}") from exc


def _validated_model(model: SystemModel) -> SystemModel:
    violations = validate_model(model)
    if violations:
        raise ConfigurationError("invalid model: " + "; ".join(violations))
    return model


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError("config root must be a JSON object")
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    raw = cfg.get("scenario", {})
    if not isinstance(raw, dict):
        raise ConfigurationError("'scenario' must be a JSON object")
    scn = dict(raw)
    if getattr(args, "seed", None) is not None:
        scn["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        scn["steps"] = args.steps
    cfg = dict(cfg)
    cfg["scenario"] = scn
    if getattr(args, "out", None) is not None:
        cfg["output_dir"] = args.out
    return cfg


def _output_dir(cfg: dict) -> Path:
    out = Path(cfg.get("output_dir", "ssue_out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output_dir {out} is not writable: {exc}") from exc
    return out


def _summary(record: RunRecord) -> dict:
    metrics = run_metrics(record)
    labels = record.scenario.model.locations.labels
    return {
        "seed": record.scenario.seed,
        "steps": record.steps,
        "identified": labels[metrics.identified_final],
        "identification_correct": metrics.success,
        "final_mu": metrics.final_mu.tolist(),
        "final_delta_hat": float(record.fused_means[-1, 0]),
        "true_delta": record.scenario.true_delta,
        "final_delta_abs_error": float(metrics.delta_error_traj[-1]),
        "rmse": {"ssue": metrics.rmse_ssue.tolist(), "ekf": metrics.rmse_ekf.tolist()},
    }


def cmd_simulate(cfg: dict, args) -> int:
    scenario = _scenario_from_config(cfg)
    _validated_model(scenario.model)
    out = _output_dir(cfg)
    save_record(simulate(scenario), out)
    print(f"wrote truth/measurements for {scenario.steps} steps to {out}")
    return EXIT_OK


def cmd_estimate(cfg: dict, args) -> int:
    scenario = _scenario_from_config(cfg)
    _validated_model(scenario.model)
    opts = _newton_from_config(cfg)
    out = _output_dir(cfg)

    runs = args.runs if args.runs is not None else 1
    if runs < 1:
        raise ConfigurationError("--runs must be >= 1")

    if runs == 1:
        record = _estimate_one(scenario, opts, args.input)
        save_record(record, out)
        summary = _summary(record)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        print(f"identified {summary['identified']} "
              f"(delta_hat {summary['final_delta_hat']:.4f}); outputs in {out}")
        return EXIT_OK

    if args.input is not None:
        raise ConfigurationError("--input and --runs cannot be combined")
    summaries = []
    for i in range(runs):
        scn = replace(scenario, seed=scenario.seed + i)
        record = run_estimation(scn, opts)
        run_dir = out / f"run_{i:03d}"
        save_record(record, run_dir)
        summary = _summary(record)
        (run_dir / "summary.json").write_text(json.dumps(summary, indent=2))
        summaries.append(summary)
    aggregate = {
        "runs": runs,
        "success_rate": float(np.mean([s["identification_correct"] for s in summaries])),
        "median_final_delta_abs_error": float(
            np.median([s["final_delta_abs_error"] for s in summaries])),
        "rmse_ssue_mean": np.mean([s["rmse"]["ssue"] for s in summaries], axis=0).tolist(),
        "rmse_ekf_mean": np.mean([s["rmse"]["ekf"] for s in summaries], axis=0).tolist(),
        "per_run": summaries,
    }
    (out / "aggregate.json").write_text(json.dumps(aggregate, indent=2))
    print(f"{runs} runs: success rate {aggregate['success_rate']:.2f}; outputs in {out}")
    return EXIT_OK


def _estimate_one(scenario: Scenario, opts: NewtonOptions, input_dir) -> RunRecord:
    if input_dir is None:
        return run_estimation(scenario, opts)
    record = load_record(input_dir)
    if record.scenario is not None:
        scenario = record.scenario
    else:
        record.scenario = scenario
    if record.truth.shape[1] != scenario.model.n:
        raise ConfigurationError("input record does not match the configured model")
    return run_estimation(scenario, opts, record=record)


def cmd_observability(cfg: dict, args) -> int:
    scenario = _scenario_from_config(cfg)
    _validated_model(scenario.model)
    obs_cfg = cfg.get("observability", {})
    K = int(obs_cfg.get("K", 10))
    if K < 1:
        raise ConfigurationError("observability K must be >= 1")
    grid_points = int(obs_cfg.get("grid_points", 101))
    tol_cfg = obs_cfg.get("tolerance_policy", {})
    tolerance = RankTolerance(kind=tol_cfg.get("kind", "relative"),
                              value=tol_cfg.get("value"))
    out = _output_dir(cfg)

    model = scenario.model
    # Nonlinear measurement maps are linearized at the scenario's initial truth.
    C = linearized_C(model, x_ref=scenario.x0_truth)
    grid = DeltaGrid.from_domain(model.domain, points_per_interval=grid_points)
    report = pairwise_rank_test(model.A, C, model.locations, grid, K, tolerance)

    doc = report.to_dict()
    doc["grid"] = {
        "points": int(len(grid)),
        "min": float(grid.values.min()),
        "max": float(grid.values.max()),
        "resolution": grid.resolution,
    }
    (out / "observability_report.json").write_text(json.dumps(doc, indent=2))
    if report.smallest_passing_N is None:
        print(f"not observable on the grid at horizon {K}: "
              f"{len(report.failures)} failing pairs (report in {out})", file=sys.stderr)
        return EXIT_NOT_OBSERVABLE
    print(f"observable from N={report.smallest_passing_N}; report in {out}")
    return EXIT_OK


def cmd_analyze(cfg: dict, args) -> int:
    if args.input is None:
        raise ConfigurationError("analyze needs --input RECORD_DIR")
    try:
        record = load_record(args.input)
    except (OSError, ContractError) as exc:
        raise ConfigurationError(f"cannot load record {args.input}: {exc}") from exc
    if record.log_lambdas is None or record.scenario is None:
        raise ConfigurationError(
            f"record {args.input} has no stored likelihoods; run `ssue estimate` first")
    out = _output_dir(cfg)
    ana = cfg.get("analysis", {})
    horizon = int(ana.get("horizon", 20))
    scenario = record.scenario
    model = scenario.model
    M = model.M

    grid = DeltaGrid(values=np.array([scenario.true_delta]))
    D = kl_separation(model, grid, horizon, x_ref=scenario.x0_truth)
    labels = model.locations.labels
    with (out / "kl_matrix.csv").open("w", newline="") as fh:
        fh.write("," + ",".join(labels) + "\n")
        for t in range(M):
            fh.write(labels[t] + "," + ",".join(repr(float(v)) for v in D[t]) + "\n")

    pairs = ana.get("ratio_pairs")
    if pairs is None:
        pairs = [[t, i] for t in range(M) for i in range(M) if t != i]
    for t, i in pairs:
        traj = loglik_ratio_trajectory(record, int(t), int(i))
        path = out / f"loglik_ratio_{labels[int(t)]}_vs_{labels[int(i)]}.csv"
        with path.open("w", newline="") as fh:
            fh.write("step,log_ratio\n")
            for k, v in enumerate(traj):
                fh.write(f"{k},{float(v)!r}\n")
    print(f"KL matrix (horizon {horizon}) and {len(pairs)} ratio trajectories in {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "observability": cmd_observability,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssue",
        description="Simultaneous state and uncertainty estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate truth and measurement CSVs"),
        ("estimate", "run the filter (and EKF baseline) over a scenario"),
        ("observability", "pairwise rank test over the delta grid"),
        ("analyze", "KL matrix and evidence-ratio trajectories of a record"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--seed", type=int, default=None, help="override scenario seed")
        cmd.add_argument("--steps", type=int, default=None, help="override run length")
        cmd.add_argument("--out", default=None, help="override output_dir")
        cmd.add_argument("--input", default=None,
                         help="existing record directory (estimate/analyze)")
        if name == "estimate":
            cmd.add_argument("--runs", type=int, default=None,
                             help="Monte Carlo batch size (seeds seed..seed+N-1)")
        else:
            cmd.set_defaults(runs=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(_load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigurationError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc} (context: {exc.context})", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
