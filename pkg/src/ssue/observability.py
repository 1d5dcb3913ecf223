"""Joint observability testing and noise-free hypothesis reconstruction.

Two triplets (x0, delta, L) and (x0', delta', L') are distinguishable from
noise-free outputs exactly when the side-by-side stacked observability
matrices of the two hypotheses have full combined column rank 2n.  The
perturbation interval is continuous, so the test runs on a finite grid of
delta values and the result is a grid certificate, not a proof over the
whole domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ExcitationError, NoMatchError
from .model import LocationMatrix, LocationSet, UncertaintyDomain

_SVD_CHUNK = 8192


@dataclass(frozen=True)
class DeltaGrid:
    """Finite set of perturbation values standing in for the continuous domain."""

    values: np.ndarray
    resolution: float = 0.0

    def __post_init__(self):
        v = np.unique(np.asarray(self.values, dtype=float).reshape(-1))
        if v.size == 0:
            raise ContractError("delta grid must be nonempty")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "resolution", float(self.resolution))

    def __len__(self):
        return self.values.size

    @classmethod
    def from_domain(cls, domain: UncertaintyDomain, points_per_interval: int = 101) -> "DeltaGrid":
        """Uniform grid per interval, merged over the union."""
        if points_per_interval < 1:
            raise ContractError("points_per_interval must be >= 1")
        values = []
        spacings = [0.0]
        for lo, hi in domain.intervals:
            if hi == lo or points_per_interval == 1:
                values.append(lo)
            else:
                values.extend(np.linspace(lo, hi, points_per_interval))
                spacings.append((hi - lo) / (points_per_interval - 1))
        return cls(values=np.asarray(values), resolution=max(spacings))


@dataclass(frozen=True)
class RankTolerance:
    """Numerical-rank cutoff: singular values above the cutoff count.

    "relative" uses ``value * sigma_max`` (default value max(rows, cols) * eps,
    the standard rule); "absolute" uses ``value`` directly.
    """

    kind: str = "relative"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("relative", "absolute"):
            raise ContractError(f"unknown tolerance kind {self.kind!r}")
        if self.kind == "absolute" and self.value is None:
            raise ContractError("absolute tolerance needs a value")

    def cutoff(self, shape: tuple[int, int], sigma_max: np.ndarray) -> np.ndarray:
        if self.kind == "absolute":
            return np.full_like(np.asarray(sigma_max, dtype=float), self.value)
        factor = self.value if self.value is not None else max(shape) * np.finfo(float).eps
        return factor * np.asarray(sigma_max, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class PairFailure:
    """One hypothesis pair that missed full combined rank at the tested horizon."""

    delta_a: float
    loc_a: int
    delta_b: float
    loc_b: int
    rank: int
    required_rank: int


@dataclass(frozen=True)
class ObservabilityReport:
    horizon_tested: int
    smallest_passing_N: int | None
    failures: tuple[PairFailure, ...]
    tolerance: RankTolerance
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "horizon_tested": self.horizon_tested,
            "smallest_passing_N": self.smallest_passing_N,
            "failures": [
                {
                    "hypothesis_a": {"delta": f.delta_a, "location": f.loc_a},
                    "hypothesis_b": {"delta": f.delta_b, "location": f.loc_b},
                    "rank": f.rank,
                    "required_rank": f.required_rank,
                }
                for f in self.failures
            ],
            "warnings": list(self.warnings),
            "tolerance": self.tolerance.to_dict(),
        }


def stack_observability(delta: float, loc: LocationMatrix, A, C, k: int) -> np.ndarray:
    """Rows C (A + delta L)^j for j = 0..k, stacked into a ((k+1)p) x n matrix."""
    if k < 0:
        raise ContractError("horizon k must be >= 0")
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n or loc.n != n:
        raise ContractError("A, C and the location matrix disagree on dimensions")
    A_pert = A + float(delta) * loc.entries
    blocks = np.empty((k + 1, C.shape[0], n))
    power = np.eye(n)
    for j in range(k + 1):
        blocks[j] = C @ power
        power = A_pert @ power
    return blocks.reshape((k + 1) * C.shape[0], n)


def _batched_ranks(X: np.ndarray, tolerance: RankTolerance) -> np.ndarray:
    """Numerical ranks of a stack of matrices via singular values."""
    sv = np.linalg.svd(X, compute_uv=False)
    cut = tolerance.cutoff(X.shape[-2:], sv[:, 0])
    return (sv > cut[:, None]).sum(axis=1)


def pairwise_rank_test(A, C, locations: LocationSet, grid: DeltaGrid, K: int,
                       tolerance: RankTolerance = RankTolerance()) -> ObservabilityReport:
    """Rank-test every unordered pair of distinct (delta, location) hypotheses.

    For each horizon k = 1..K the side-by-side matrix of each still-failing
    pair is rank-checked against 2n (rank is non-decreasing in k, so pairs
    that pass once are not retested).  The report carries the smallest k at
    which every pair passed, or the failing pairs at horizon K.
    """
    if K < 1:
        raise ContractError("horizon K must be >= 1")
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    p = C.shape[0]
    required = 2 * n
    M = len(locations)

    hyps = [(float(d), i) for d in grid.values for i in range(M)]
    full = np.stack([
        stack_observability(d, locations[i], A, C, K) for d, i in hyps
    ])

    warnings = []
    if np.any(grid.values == 0.0) and M > 1:
        for i in range(M):
            for j in range(i + 1, M):
                warnings.append(
                    "delta=0 collapses the hypotheses: "
                    f"(0, location {i}) and (0, location {j}) share one observability "
                    f"matrix, so combined rank {required} is unreachable"
                )

    n_hyp = len(hyps)
    ia, ib = np.triu_indices(n_hyp, k=1)
    pool = np.arange(ia.size)
    smallest = None
    ranks_at_K = np.empty(ia.size, dtype=int)

    for k in range(1, K + 1):
        if pool.size == 0:
            if smallest is None:
                smallest = k  # no pairs left (or none to begin with)
            break
        rows = (k + 1) * p
        if rows < required and k < K:
            continue  # rank <= row count: no pair can reach 2n yet
        passed = np.zeros(pool.size, dtype=bool)
        for start in range(0, pool.size, _SVD_CHUNK):
            chunk = pool[start:start + _SVD_CHUNK]
            X = np.concatenate(
                [full[ia[chunk], :rows, :], full[ib[chunk], :rows, :]], axis=2
            )
            r = _batched_ranks(X, tolerance)
            passed[start:start + chunk.size] = r == required
            if k == K:
                ranks_at_K[chunk] = r
        pool = pool[~passed]
        if pool.size == 0 and smallest is None:
            smallest = k
            break

    failures = tuple(
        PairFailure(
            delta_a=hyps[ia[q]][0], loc_a=hyps[ia[q]][1],
            delta_b=hyps[ib[q]][0], loc_b=hyps[ib[q]][1],
            rank=int(ranks_at_K[q]), required_rank=required,
        )
        for q in pool
    )
    return ObservabilityReport(
        horizon_tested=K,
        smallest_passing_N=smallest,
        failures=failures,
        tolerance=tolerance,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class ReconstructionResult:
    x0: np.ndarray
    delta: float
    loc_index: int
    residual: float


def reconstruct(Y_star, A, C, locations: LocationSet, grid: DeltaGrid,
                tol: float = 1e-8) -> ReconstructionResult:
    """Invert a noise-free output stack into (x0, delta, location).

    Scans the hypothesis grid, solves the least-squares problem for x0 via
    orthogonal factorization, and keeps the candidate with the smallest
    relative residual.  Residual at or below ``tol`` realizes the membership
    condition "the stack lies in the column space of the candidate".
    """
    Y = np.asarray(Y_star, dtype=float).reshape(-1)
    norm_Y = float(np.linalg.norm(Y))
    if norm_Y == 0.0:
        raise ExcitationError(
            "output stack is identically zero: every hypothesis fits and none is identifiable"
        )
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p = C.shape[0]
    if Y.size % p != 0 or Y.size < p:
        raise ContractError(f"output stack length {Y.size} is not a multiple of p={p}")
    k = Y.size // p - 1

    best = None
    for d in grid.values:
        for i in range(len(locations)):
            O = stack_observability(d, locations[i], A, C, k)
            x0, *_ = np.linalg.lstsq(O, Y, rcond=None)
            residual = float(np.linalg.norm(O @ x0 - Y)) / norm_Y
            if best is None or residual < best.residual:
                best = ReconstructionResult(x0=x0, delta=float(d), loc_index=i,
                                            residual=residual)
    if best.residual > tol:
        raise NoMatchError(
            f"no hypothesis fits within tolerance {tol:g}; best candidate "
            f"(delta={best.delta:g}, location {best.loc_index}) has residual {best.residual:.3e}"
        )
    return best
