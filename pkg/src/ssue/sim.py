"""Truth/measurement generation, the range-sensor tracking preset, Monte Carlo.

Sampling is fully deterministic per seed: noise comes from
``numpy.random.default_rng`` (PCG64), drawn in a fixed order (process noise
then measurement noise, once per step) through Cholesky-style factors of Q
and R.  Identical seeds give bit-identical records.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, NumericalFailureError
from .filters import NewtonOptions, ekf_step, initial_bank, ssue_step
from .model import (
    LocationMatrix,
    LocationSet,
    SystemModel,
    UncertaintyDomain,
    model_from_json,
    model_to_json,
    range_sensor_map,
)

DEFAULT_SENSORS = ((-10.0, 0.0), (10.0, 0.0), (0.0, 10.0))
DEFAULT_X0 = (5.0, 5.0, 1.0, -0.5)
DEFAULT_DELTA_DOMAIN = ((-0.2, -0.01),)


@dataclass(frozen=True)
class Scenario:
    """One reproducible experiment: a model plus the hidden truth and a seed."""

    model: SystemModel
    true_delta: float
    true_loc_index: int
    x0_truth: np.ndarray
    steps: int
    seed: int
    Ts: float = 0.1

    def __post_init__(self):
        x0 = np.asarray(self.x0_truth, dtype=float).reshape(-1)
        if x0.shape != (self.model.n,):
            raise ContractError(f"x0_truth must have shape ({self.model.n},), got {x0.shape}")
        if not 0 <= self.true_loc_index < self.model.M:
            raise ContractError(f"true_loc_index {self.true_loc_index} out of range")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if not self.Ts > 0.0:
            raise ContractError("Ts must be positive")
        x0.setflags(write=False)
        object.__setattr__(self, "x0_truth", x0)
        object.__setattr__(self, "true_delta", float(self.true_delta))
        object.__setattr__(self, "Ts", float(self.Ts))

    def to_dict(self) -> dict:
        return {
            "model": json.loads(model_to_json(self.model)),
            "true_delta": self.true_delta,
            "true_loc_index": self.true_loc_index,
            "x0_truth": self.x0_truth.tolist(),
            "steps": self.steps,
            "seed": self.seed,
            "Ts": self.Ts,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    """Everything one run produces; estimation fields are None for truth-only records."""

    scenario: Scenario | None
    truth: np.ndarray
    measurements: np.ndarray
    mu: np.ndarray | None = None
    log_lambdas: np.ndarray | None = None
    fused_means: np.ndarray | None = None
    fused_covs: np.ndarray | None = None
    identified: np.ndarray | None = None
    ekf_means: np.ndarray | None = None
    ekf_covs: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.truth.shape[0]


def tracking_preset(Ts: float = 0.1, q: float = 0.05, r: float = 2.0,
                    sensors=DEFAULT_SENSORS, true_delta: float = -0.05,
                    true_loc_index: int = 1, x0=DEFAULT_X0, steps: int = 300,
                    seed: int = 0, delta_domain=DEFAULT_DELTA_DOMAIN,
                    P0=None) -> Scenario:
    """Planar constant-velocity target tracked by fixed range sensors.

    State is (position x, position y, velocity x, velocity y).  The three
    candidate perturbation locations touch, respectively, the position-x /
    velocity-y coupling, both position diagonal entries (the default truth),
    and the velocity-x diagonal entry.  ``q`` scales the discretized
    white-acceleration process noise, ``r`` the per-sensor range variance.
    """
    if not Ts > 0.0:
        raise ContractError("Ts must be positive")
    if q < 0.0 or not r > 0.0:
        raise ContractError("q must be >= 0 and r > 0")
    A = np.array([
        [1.0, 0.0, Ts, 0.0],
        [0.0, 1.0, 0.0, Ts],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    L1 = np.zeros((4, 4)); L1[0, 3] = 1.0
    L2 = np.zeros((4, 4)); L2[0, 0] = 1.0; L2[1, 1] = 1.0
    L3 = np.zeros((4, 4)); L3[2, 2] = 1.0
    locations = LocationSet((
        LocationMatrix(L1, label="A1"),
        LocationMatrix(L2, label="A2"),
        LocationMatrix(L3, label="A3"),
    ))
    Q = q * np.array([
        [Ts ** 3 / 3.0, 0.0, Ts ** 2 / 2.0, 0.0],
        [0.0, Ts ** 3 / 3.0, 0.0, Ts ** 2 / 2.0],
        [Ts ** 2 / 2.0, 0.0, Ts, 0.0],
        [0.0, Ts ** 2 / 2.0, 0.0, Ts],
    ])
    sensors = tuple((float(sx), float(sy)) for sx, sy in sensors)
    R = r * np.eye(len(sensors))
    if P0 is None:
        P0 = np.diag([25.0, 25.0, 4.0, 4.0])
    measurement_spec = {"type": "range", "sensors": [list(s) for s in sensors],
                        "position_indices": [0, 1]}
    model = SystemModel(
        A=A, locations=locations, domain=UncertaintyDomain(tuple(delta_domain)),
        Q=Q, R=R, P0=np.asarray(P0, dtype=float),
        map=range_sensor_map(sensors, (0, 1), state_dim=4),
        measurement_spec=measurement_spec,
    )
    return Scenario(model=model, true_delta=true_delta, true_loc_index=true_loc_index,
                    x0_truth=np.asarray(x0, dtype=float), steps=steps, seed=seed, Ts=Ts)


def _psd_factor(M: np.ndarray, name: str) -> np.ndarray:
    """Factor F with F F^T = M for sampling; exact zeros stay exact."""
    M = 0.5 * (M + M.T)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(M)
    scale = max(float(w[-1]), 1.0)
    if w[0] < -1e-10 * scale:
        raise NumericalFailureError(f"{name} is indefinite; cannot sample from it",
                                    context={"eig_min": float(w[0])})
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(scenario: Scenario) -> RunRecord:
    """Generate the truth trajectory and measurements (no estimation)."""
    model = scenario.model
    n, p = model.n, model.p
    loc = model.locations[scenario.true_loc_index]
    A_true = model.A + scenario.true_delta * loc.entries
    Fq = _psd_factor(model.Q, "Q")
    Fr = _psd_factor(model.R, "R")
    rng = np.random.default_rng(scenario.seed)

    truth = np.empty((scenario.steps, n))
    meas = np.empty((scenario.steps, p))
    x = scenario.x0_truth.copy()
    for k in range(scenario.steps):
        x = A_true @ x + Fq @ rng.standard_normal(n)
        meas[k] = model.map.evaluate(x) + Fr @ rng.standard_normal(p)
        truth[k] = x
    meta = {"seed": scenario.seed}
    try:
        meta["scenario_hash"] = scenario.hash()
    except ConfigurationError:
        pass  # hand-built measurement maps have no serializable form to hash
    return RunRecord(scenario=scenario, truth=truth, measurements=meas, meta=meta)


def run_estimation(scenario: Scenario, opts: NewtonOptions = NewtonOptions(),
                   record: RunRecord | None = None) -> RunRecord:
    """Simulate (unless a record is supplied) and run the filter plus the EKF baseline.

    The EKF consumes the exact same measurement sequence, initialized at the
    same state mean and covariance as the filter bank.
    """
    model = scenario.model
    if record is None:
        record = simulate(scenario)
    steps = record.steps
    n, M = model.n, model.M

    bank = initial_bank(model)
    ekf_mean = np.zeros(n)
    ekf_cov = model.P0.copy()

    mu = np.empty((steps, M))
    log_lams = np.empty((steps, M))
    fused_means = np.empty((steps, n + 1))
    fused_covs = np.empty((steps, n + 1, n + 1))
    identified = np.empty(steps, dtype=int)
    ekf_means = np.empty((steps, n))
    ekf_covs = np.empty((steps, n, n))

    for k in range(steps):
        result = ssue_step(bank, record.measurements[k], model, opts, step=k)
        bank = result.bank
        mu[k] = bank.weights
        log_lams[k] = result.log_lambdas
        fused_means[k] = result.fused.xi_mean
        fused_covs[k] = result.fused.xi_cov
        identified[k] = result.identified_index
        ekf_mean, ekf_cov = ekf_step(ekf_mean, ekf_cov, record.measurements[k], model)
        ekf_means[k] = ekf_mean
        ekf_covs[k] = ekf_cov

    record.mu = mu
    record.log_lambdas = log_lams
    record.fused_means = fused_means
    record.fused_covs = fused_covs
    record.identified = identified
    record.ekf_means = ekf_means
    record.ekf_covs = ekf_covs
    return record


@dataclass(frozen=True)
class RunMetrics:
    seed: int
    final_mu: np.ndarray
    identified_final: int
    success: bool
    delta_error_traj: np.ndarray
    rmse_ssue: np.ndarray
    rmse_ekf: np.ndarray


@dataclass(frozen=True)
class MetricsSummary:
    """Per-run metrics plus simple aggregates over a Monte Carlo batch."""

    per_run: tuple[RunMetrics, ...]
    failures: tuple[tuple[int, str], ...]
    success_rate: float
    median_final_delta_error: float
    rmse_ssue_mean: np.ndarray
    rmse_ekf_mean: np.ndarray
    ssue_beats_ekf_rate: np.ndarray

    def to_dict(self) -> dict:
        return {
            "runs": len(self.per_run),
            "failed_runs": [{"seed": s, "error": msg} for s, msg in self.failures],
            "success_rate": self.success_rate,
            "median_final_delta_error": self.median_final_delta_error,
            "rmse_ssue_mean": self.rmse_ssue_mean.tolist(),
            "rmse_ekf_mean": self.rmse_ekf_mean.tolist(),
            "ssue_beats_ekf_rate": self.ssue_beats_ekf_rate.tolist(),
            "per_run": [
                {
                    "seed": r.seed,
                    "final_mu": r.final_mu.tolist(),
                    "identified_final": int(r.identified_final),
                    "success": bool(r.success),
                    "final_delta_error": float(r.delta_error_traj[-1]),
                    "rmse_ssue": r.rmse_ssue.tolist(),
                    "rmse_ekf": r.rmse_ekf.tolist(),
                }
                for r in self.per_run
            ],
        }


def run_metrics(record: RunRecord) -> RunMetrics:
    """Identification and accuracy metrics of one completed estimation run."""
    scn = record.scenario
    err_ssue = record.fused_means[:, 1:] - record.truth
    err_ekf = record.ekf_means - record.truth
    return RunMetrics(
        seed=scn.seed,
        final_mu=record.mu[-1].copy(),
        identified_final=int(record.identified[-1]),
        success=bool(record.identified[-1] == scn.true_loc_index),
        delta_error_traj=np.abs(record.fused_means[:, 0] - scn.true_delta),
        rmse_ssue=np.sqrt(np.mean(err_ssue ** 2, axis=0)),
        rmse_ekf=np.sqrt(np.mean(err_ekf ** 2, axis=0)),
    )


def monte_carlo(scenario_template: Scenario, n_runs: int, seed_base: int,
                opts: NewtonOptions = NewtonOptions()) -> MetricsSummary:
    """Repeat the experiment with seeds seed_base, seed_base+1, ... and aggregate.

    Runs that die with a numerical failure are reported in ``failures``
    rather than dropped.
    """
    if n_runs < 1:
        raise ContractError("n_runs must be >= 1")
    per_run = []
    failures = []
    for i in range(n_runs):
        scn = replace(scenario_template, seed=seed_base + i)
        try:
            per_run.append(run_metrics(run_estimation(scn, opts)))
        except NumericalFailureError as exc:
            failures.append((scn.seed, str(exc)))
    if not per_run:
        raise NumericalFailureError("every Monte Carlo run failed",
                                    context={"failures": failures})
    rmse_ssue = np.stack([r.rmse_ssue for r in per_run])
    rmse_ekf = np.stack([r.rmse_ekf for r in per_run])
    return MetricsSummary(
        per_run=tuple(per_run),
        failures=tuple(failures),
        success_rate=float(np.mean([r.success for r in per_run])),
        median_final_delta_error=float(np.median([r.delta_error_traj[-1] for r in per_run])),
        rmse_ssue_mean=rmse_ssue.mean(axis=0),
        rmse_ekf_mean=rmse_ekf.mean(axis=0),
        ssue_beats_ekf_rate=np.mean(rmse_ssue < rmse_ekf, axis=0),
    )


# ---------------------------------------------------------------------------
# Record persistence: one directory per run, CSV bodies deterministic
# (shortest round-trip floats), volatile data confined to meta.json.

def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def save_record(record: RunRecord, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    steps = record.steps
    n = record.truth.shape[1]
    p = record.measurements.shape[1]

    _write_csv(directory / "truth.csv", ["step"] + [f"x{j}" for j in range(n)],
               ([k] + list(record.truth[k]) for k in range(steps)))
    _write_csv(directory / "measurements.csv", ["step"] + [f"y{j}" for j in range(p)],
               ([k] + list(record.measurements[k]) for k in range(steps)))

    if record.mu is not None:
        M = record.mu.shape[1]
        _write_csv(
            directory / "weights.csv",
            ["step"] + [f"mu_{i}" for i in range(M)] + [f"log_lambda_{i}" for i in range(M)],
            ([k] + list(record.mu[k]) + list(record.log_lambdas[k]) for k in range(steps)),
        )
        _write_csv(
            directory / "estimates.csv",
            ["step", "delta_hat"] + [f"xhat_{j}" for j in range(n)]
            + [f"ekf_{j}" for j in range(n)] + ["identified"],
            ([k, record.fused_means[k, 0]] + list(record.fused_means[k, 1:])
             + list(record.ekf_means[k]) + [int(record.identified[k])]
             for k in range(steps)),
        )

    meta = dict(record.meta)
    meta.setdefault("created_unix", time.time())
    if record.scenario is not None:
        meta["scenario"] = record.scenario.to_dict()
        meta["labels"] = record.scenario.model.locations.labels
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_record(directory) -> RunRecord:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise ContractError(f"no meta.json in {directory}")
    meta = json.loads(meta_path.read_text())

    def read_csv(name):
        path = directory / name
        if not path.exists():
            return None
        data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
        return data[:, 1:]  # drop the step column

    truth = read_csv("truth.csv")
    meas = read_csv("measurements.csv")
    if truth is None or meas is None:
        raise ContractError(f"{directory} is missing truth.csv or measurements.csv")

    scenario = None
    if "scenario" in meta:
        sd = meta["scenario"]
        scenario = Scenario(
            model=model_from_json(json.dumps(sd["model"])),
            true_delta=sd["true_delta"], true_loc_index=sd["true_loc_index"],
            x0_truth=np.asarray(sd["x0_truth"]), steps=sd["steps"],
            seed=sd["seed"], Ts=sd["Ts"],
        )

    record = RunRecord(scenario=scenario, truth=truth, measurements=meas, meta=meta)
    weights = read_csv("weights.csv")
    if weights is not None:
        M = weights.shape[1] // 2
        record.mu = weights[:, :M]
        record.log_lambdas = weights[:, M:]
    estimates = read_csv("estimates.csv")
    if estimates is not None:
        n = truth.shape[1]
        record.fused_means = estimates[:, :n + 1]
        record.ekf_means = estimates[:, n + 1:2 * n + 1]
        record.identified = estimates[:, -1].astype(int)
    return record
