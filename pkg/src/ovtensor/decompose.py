"""End-to-end pipeline (lift, truncate, round) and recovery metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditionFailure, EmptySet, GapTooSmall
from .lift import ConditionReport, SymTensor4, condition_quantities, lift
from .linalg import DELTA_FLOOR
from .rounding import RoundParams, RoundStats, preprocess_truncate, round_all

COVER_THRESHOLD = 0.99


@dataclass(frozen=True)
class DecomposeParams:
    n: int
    epsilon: float = 0.0
    beta: float = 0.1
    delta: float = 0.1
    sigma_floor: float = 1e-10
    kappa_floor: float = 0.0
    seed: int = 0
    repetitions: int | None = None
    theta: float | None = None
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.epsilon < 0.0 or self.sigma_floor < 0.0 or self.kappa_floor < 0.0:
            raise ValueError("epsilon, sigma_floor and kappa_floor must be nonnegative")

    def round_params(self) -> RoundParams:
        return RoundParams(
            beta=self.beta,
            delta=self.delta,
            epsilon=self.epsilon,
            theta=self.theta,
            repetitions=self.repetitions,
            seed=self.seed,
            threads=self.threads,
        )

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class RecoveryReport:
    recovered: np.ndarray
    per_vector_best_corr: np.ndarray | None = None
    covered_fraction: float | None = None
    signed_hausdorff: float | None = None
    timings: dict = field(default_factory=dict)
    condition: ConditionReport | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(self.recovered.shape[0])

    def to_json(self) -> dict:
        cond = self.condition.as_dict() if self.condition is not None else {}
        return {
            "recovered_count": self.count,
            "covered_fraction": self.covered_fraction,
            "signed_hausdorff": self.signed_hausdorff,
            "per_vector_best_corr": None if self.per_vector_best_corr is None else self.per_vector_best_corr.tolist(),
            "sigma_n": cond.get("sigma_n"),
            "mu": cond.get("mu"),
            "kappa": cond.get("kappa"),
            "timings": dict(self.timings),
            "diagnostics": dict(self.diagnostics),
        }


def _as_set(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    return np.atleast_2d(arr)


def _sign_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``min over s in {+1,-1} of ||a_i - s b_j||`` for all pairs."""
    na = np.sum(a * a, axis=1)[:, None]
    nb = np.sum(b * b, axis=1)[None, :]
    return np.sqrt(np.clip(na + nb - 2.0 * np.abs(a @ b.T), 0.0, None))


def signed_hausdorff(a, b) -> float:
    a = _as_set(a)
    b = _as_set(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySet("signed Hausdorff distance needs two nonempty sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError("vector dimensions differ")
    dist = _sign_distances(a, b)
    return float(max(dist.min(axis=1).max(), dist.min(axis=0).max()))


def recovery_report(
    recovered,
    ground_truth=None,
    *,
    threshold: float = COVER_THRESHOLD,
    timings: dict | None = None,
    condition: ConditionReport | None = None,
    diagnostics: dict | None = None,
) -> RecoveryReport:
    """Correlations and coverage against ``ground_truth`` when given.

    A truth vector is covered when some recovered vector has ``|<.,.>| >= threshold``.
    The distance is the signed Hausdorff distance to the covered truth subset
    (the single best-matched truth vector if none is covered).
    """
    rec = _as_set(recovered)
    extra = dict(timings=timings or {}, condition=condition, diagnostics=diagnostics or {})
    if ground_truth is None:
        return RecoveryReport(rec, **extra)
    truth = _as_set(ground_truth)
    if rec.shape[0] == 0:
        return RecoveryReport(rec, np.zeros(0), 0.0, None, **extra)
    corr = np.abs(rec @ truth.T)
    best = corr.max(axis=1)
    covered = corr.max(axis=0) >= threshold
    subset = truth[covered] if np.any(covered) else truth[[int(np.argmax(corr.max(axis=0)))]]
    return RecoveryReport(rec, best, float(np.mean(covered)), signed_hausdorff(rec, subset), **extra)


def decompose(t: SymTensor4, params: DecomposeParams, truth=None) -> RecoveryReport:
    """Lift ``t``, clip the lifted tensor and round it; report against ``truth`` when given.

    A gate failure in the lift raises ``ConditionFailure`` naming "sigma" or "kappa".
    """
    timings: dict[str, float] = {}
    clock = time.perf_counter()
    try:
        out = lift(t, params.n, params.sigma_floor, params.kappa_floor, seed=params.seed)
    except GapTooSmall as exc:
        floor = params.sigma_floor if exc.quantity == "sigma" else (params.kappa_floor**2 or DELTA_FLOOR)
        raise ConditionFailure(str(exc), quantity=exc.quantity, measured=exc.measured, floor=floor) from exc
    timings["lift"] = time.perf_counter() - clock

    rp = params.round_params()
    clock = time.perf_counter()
    t_trunc = preprocess_truncate(out.whitened(), rp.epsilon, delta=rp.delta, seed=rp.seed)
    timings["truncate"] = time.perf_counter() - clock

    clock = time.perf_counter()
    stats = RoundStats()
    rec = round_all(t_trunc, out.pi3_basis, out.whitener_matrix(), rp, stats=stats, preprocessed=True)
    timings["round"] = time.perf_counter() - clock

    condition = None
    if truth is not None:
        condition = condition_quantities(truth)
    diagnostics = {"lift": out.diagnostics, "round": stats.as_dict()}
    return recovery_report(
        np.array(rec).reshape(len(rec), t.d),
        truth,
        timings=timings,
        condition=condition,
        diagnostics=diagnostics,
    )
