"""Rounding stage: random flattenings of the truncated orthogonal 3-tensor.

Each repetition contracts mode 2 with a Gaussian vector, reads the top
singular pair of the resulting d^2 x d^2 matrix, turns both singular vectors
into candidate components of R^d and keeps the ones passing a membership test
against the lifted subspace.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoConvergence, ZeroVector
from .implicit_tensor import DEFAULT_DELTA, FactoredMatrix, ImplicitTensor3, as_factored, spectral_truncate
from .linalg import ITERATION_CONSTANT, LowRankEig, SingularPair, fix_signs, iteration_budget

THETA_MIN = 1e-3
THETA_MAX = 0.9
ZERO_NORM = 1e-12
POWER_TOL = 1e-9
CHUNK = 32


@dataclass(frozen=True)
class RoundParams:
    """Rounding parameters. ``theta``/``repetitions`` of ``None`` use the defaults."""

    beta: float = 0.1
    delta: float = 0.1
    epsilon: float = 0.0
    theta: float | None = None
    repetitions: int | None = None
    seed: int = 0
    iteration_constant: float = ITERATION_CONSTANT
    threads: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")
        if self.theta is not None and not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.repetitions is not None and self.repetitions < 0:
            raise ValueError("repetitions must be nonnegative")


@dataclass(frozen=True)
class Candidate:
    vector: np.ndarray
    gap_ratio: float
    side: str
    converged: bool = True


def default_theta(w_norm: float, epsilon: float, delta: float, beta: float) -> float:
    """``10 |W| (2 eps^{1/4} + 2 (3 eps / (delta beta))^{1/8}) + 2 eps`` clamped to [1e-3, 0.9]."""
    raw = 10.0 * w_norm * (2.0 * epsilon**0.25 + 2.0 * (3.0 * epsilon / (delta * beta)) ** 0.125) + 2.0 * epsilon
    return float(min(max(raw, THETA_MIN), THETA_MAX))


def default_repetitions(n: int, beta: float) -> int:
    return int(math.ceil(10.0 * n * math.log(n + 1) * n**beta))


def resolve_theta(params: RoundParams, w_norm: float) -> float:
    if params.theta is not None:
        return params.theta
    return default_theta(w_norm, params.epsilon, params.delta, params.beta)


def resolve_repetitions(params: RoundParams, n: int) -> int:
    return default_repetitions(n, params.beta) if params.repetitions is None else params.repetitions


def thread_count() -> int:
    """Worker cap from ``OVT_THREADS``; defaults to the number of cores."""
    raw = os.environ.get("OVT_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def repetition_rng(seed: int, repetition: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, repetition)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(repetition)])))


def _as_whitener(whitener: FactoredMatrix | LowRankEig | np.ndarray) -> FactoredMatrix:
    if isinstance(whitener, LowRankEig):
        return FactoredMatrix.from_low_rank(whitener.basis, whitener.eigvals**-0.5, whitener.basis.T)
    return as_factored(whitener)


def whitener_norm(whitener: FactoredMatrix | LowRankEig | np.ndarray) -> float:
    if isinstance(whitener, LowRankEig):
        return float(whitener.eigvals.min() ** -0.5)
    return float(np.linalg.norm(as_factored(whitener).dense(), 2))


def preprocess_truncate(
    t: ImplicitTensor3,
    eps: float = 0.0,
    *,
    k: int | None = None,
    delta: float = DEFAULT_DELTA,
    seed: int = 0,
    rescale: bool = False,
) -> ImplicitTensor3:
    """Clip the "12|3" and then the "23|1" reshaping at spectral norm 1.

    Both clips are exact, so no further rescaling is needed; ``rescale=True``
    additionally shrinks the result by ``1 / (1 + eps)``.
    """
    out = spectral_truncate(t, "12|3", k=k, delta=delta, seed=seed)
    out = spectral_truncate(out, "23|1", k=k, delta=delta, seed=seed + 1)
    if rescale and eps > 0.0:
        out = replace(out, U=out.U / (1.0 + eps))
    return out


class _FlatteningBatch:
    """Flattenings ``T(g_r)`` for a block of Gaussian vectors, applied together."""

    def __init__(self, t: ImplicitTensor3, gs: np.ndarray) -> None:
        d, n = t.d, t.n
        ue, ve = t.effective_factors
        self.d, self.n = d, n
        self.uf = ue.reshape(d * d, d * n)
        self.vf = ve.reshape(d * d, d * n)
        r2 = t.mults[1]
        gp = gs if r2 is None else r2.apply_t(gs.T).T
        self.g = gp.reshape(-1, d, d)

    def _apply(self, left: np.ndarray, right: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
        d, n = self.d, self.n
        r, b = y.shape[0], y.shape[2]
        inner = (right.T @ y.transpose(1, 0, 2).reshape(d * d, r * b)).reshape(d, n, r, b)
        inner = inner.transpose(2, 0, 1, 3).reshape(r, d, n * b)
        c = (g @ inner).reshape(r, d * n, b).transpose(1, 0, 2).reshape(d * n, r * b)
        return (left @ c).reshape(d * d, r, b).transpose(1, 0, 2)

    def matvec(self, y: np.ndarray) -> np.ndarray:
        """``(r, d^2, b)`` mode-3 blocks to mode-1 blocks."""
        return self._apply(self.uf, self.vf, y, self.g)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return self._apply(self.vf, self.uf, x, self.g.transpose(0, 2, 1))


def _batched_top_pairs(
    t: ImplicitTensor3, gs: np.ndarray, starts: np.ndarray, max_iters: int, tol: float
) -> list[SingularPair]:
    """Two-vector block power iteration on each ``T(g_r)``, matching ``top_singular_pair``."""
    op = _FlatteningBatch(t, gs)
    reps, d2 = gs.shape
    floor = 64 * np.finfo(float).eps * math.sqrt(d2)
    v, _ = np.linalg.qr(starts)
    u1 = np.zeros((reps, d2))
    v1 = np.zeros((reps, d2))
    sig = np.zeros((reps, 2))
    iters = np.zeros(reps, dtype=int)
    done = np.zeros(reps, dtype=bool)
    dead = np.zeros(reps, dtype=bool)
    active = np.arange(reps)
    for it in range(1, max(max_iters, 1) + 1):
        sub = _op_subset(op, active)
        fv = sub.matvec(v[active])
        uu, s, zt = np.linalg.svd(fv, full_matrices=False)
        back = sub.rmatvec(fv)
        z1 = zt[:, 0, :]
        sig[active] = s
        iters[active] = it
        zero = s[:, 0] <= 0.0
        dead[active[zero]] = True
        safe = np.where(zero, 1.0, s[:, 0])
        u1[active] = uu[:, :, 0]
        v1[active] = np.einsum("rpb,rb->rp", v[active], z1)
        ftu = np.einsum("rpb,rb->rp", back, z1) / safe[:, None]
        resid = np.linalg.norm(ftu - s[:, :1] * v1[active], axis=1)
        conv = (resid <= max(tol, floor) * safe) & ~zero
        done[active[conv]] = True
        keep = ~(conv | zero)
        if not np.any(keep):
            break
        q, _ = np.linalg.qr(back[keep])
        active = active[keep]
        v[active] = q
    pairs = []
    for r in range(reps):
        if dead[r] or sig[r, 0] <= 0.0:
            pairs.append(SingularPair(np.zeros(d2), np.zeros(d2), 0.0, 1.0, False, int(iters[r]), sig[r].copy()))
            continue
        ratio = float(sig[r, 0] / sig[r, 1]) if sig[r, 1] > 0 else math.inf
        fixed = fix_signs(u1[r])
        vv = -v1[r] if fixed @ u1[r] < 0 else v1[r]
        pairs.append(SingularPair(fixed, vv, float(sig[r, 0]), ratio, bool(done[r]), int(iters[r]), sig[r].copy()))
    return pairs


def _op_subset(op: _FlatteningBatch, idx: np.ndarray) -> _FlatteningBatch:
    if idx.size == op.g.shape[0]:
        return op
    sub = object.__new__(_FlatteningBatch)
    sub.__dict__.update(op.__dict__)
    sub.g = op.g[idx]
    return sub


def _draw(rng: np.random.Generator, d2: int) -> tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal(d2), rng.standard_normal((d2, 2))


def _candidates(pair: SingularPair) -> tuple[Candidate, Candidate]:
    return (
        Candidate(pair.u, pair.ratio, "left", pair.converged),
        Candidate(fix_signs(pair.v), pair.ratio, "right", pair.converged),
    )


def round_candidate(
    t_trunc: ImplicitTensor3,
    beta: float,
    seed: int | np.random.Generator = 0,
    *,
    constant: float = ITERATION_CONSTANT,
    tol: float = POWER_TOL,
) -> tuple[Candidate, Candidate]:
    """One Gaussian flattening ``T(g)`` (``g`` on mode 2) and its top singular pair.

    Raises ``NoConvergence`` when the flattening vanishes. A pair that did not
    converge within ``ceil(C log(d^2) / beta)`` steps is returned flagged.
    """
    rng = seed if isinstance(seed, np.random.Generator) else repetition_rng(seed, 0)
    d2 = t_trunc.d * t_trunc.d
    g, start = _draw(rng, d2)
    pair = _batched_top_pairs(t_trunc, g[None], start[None], iteration_budget(d2, beta, constant), tol)[0]
    if pair.sigma <= 0.0:
        raise NoConvergence("flattening is zero")
    return _candidates(pair)


def extract(u: np.ndarray, pi3_basis: np.ndarray) -> np.ndarray:
    """Component of R^d read off a whitened square ``u``.

    With ``Y = (u^T (x) Id) B`` (d x n), the top left singular vector of
    ``Pi3 (u u^T (x) Id)`` contracted back with ``u`` is the top left singular
    vector of ``Y``; ``||Vu||`` equals its top singular value.
    """
    u = np.asarray(u, dtype=float)
    b = np.asarray(pi3_basis, dtype=float)
    d2 = u.size
    d = b.shape[0] // d2
    y = np.einsum("p,pkm->km", u, b.reshape(d2, d, -1))
    left, sig, _ = np.linalg.svd(y, full_matrices=False)
    if sig.size == 0 or sig[0] < ZERO_NORM:
        raise ZeroVector(f"extraction norm {sig[0] if sig.size else 0.0:.3e} below {ZERO_NORM}")
    return fix_signs(left[:, 0])


def membership_ratio(candidate: np.ndarray, pi3_basis: np.ndarray, whitener) -> float:
    """``||Pi3 rho||^2 / ||rho||^2`` with ``rho = (W u (x) u) (x) u``."""
    a = np.asarray(candidate, dtype=float)
    w = _as_whitener(whitener)
    rho = np.multiply.outer(w.apply(np.outer(a, a).reshape(-1)), a).reshape(-1)
    rr = float(rho @ rho)
    if rr == 0.0:
        return 0.0
    proj = np.asarray(pi3_basis).T @ rho
    return float(proj @ proj) / rr


def test_membership(candidate: np.ndarray, theta: float, pi3_basis: np.ndarray, whitener) -> bool:
    """Accept iff ``||Pi3 rho||^2 >= (1 - theta) ||rho||^2``."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    return membership_ratio(candidate, pi3_basis, whitener) >= 1.0 - theta


test_membership.__test__ = False  # keep pytest from collecting it


@dataclass
class RoundStats:
    repetitions: int = 0
    no_convergence: int = 0
    small_gap: int = 0
    zero_vector: int = 0
    rejected: int = 0
    accepted: int = 0
    theta: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _run_chunk(t_trunc, pi3_basis, w, theta, params, reps: range) -> tuple[list[np.ndarray], dict]:
    tally = {"no_convergence": 0, "small_gap": 0, "zero_vector": 0, "rejected": 0, "accepted": 0}
    d2 = t_trunc.d * t_trunc.d
    draws = [_draw(repetition_rng(params.seed, rep), d2) for rep in reps]
    gs = np.array([g for g, _ in draws])
    starts = np.array([s for _, s in draws])
    budget = iteration_budget(d2, params.beta, params.iteration_constant)
    out = []
    for pair in _batched_top_pairs(t_trunc, gs, starts, budget, POWER_TOL):
        if pair.sigma <= 0.0 or not pair.converged:
            tally["no_convergence"] += 1
            continue
        if pair.ratio < 1.0 + params.beta:
            tally["small_gap"] += 1
            continue
        for cand in _candidates(pair):
            try:
                a = extract(cand.vector, pi3_basis)
            except ZeroVector:
                tally["zero_vector"] += 1
                continue
            if membership_ratio(a, pi3_basis, w) >= 1.0 - theta:
                tally["accepted"] += 1
                out.append(a)
            else:
                tally["rejected"] += 1
    return out, tally


def round_all(
    t: ImplicitTensor3,
    pi3_basis: np.ndarray,
    whitener,
    params: RoundParams,
    *,
    stats: RoundStats | None = None,
    preprocessed: bool = False,
) -> list[np.ndarray]:
    """Truncate once, then run the repetitions; accepted vectors in repetition order."""
    w = _as_whitener(whitener)
    theta = resolve_theta(params, whitener_norm(whitener))
    reps = resolve_repetitions(params, t.n)
    if stats is not None:
        stats.theta = theta
        stats.repetitions = reps
    if reps == 0:
        return []
    t_trunc = t if preprocessed else preprocess_truncate(t, params.epsilon, delta=params.delta, seed=params.seed)
    workers = params.threads if params.threads is not None else thread_count()

    chunks = [range(lo, min(lo + CHUNK, reps)) for lo in range(0, reps, CHUNK)]

    def run(chunk: range):
        return _run_chunk(t_trunc, pi3_basis, w, theta, params, chunk)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]
    accepted: list[np.ndarray] = []
    for vecs, tally in results:
        accepted.extend(vecs)
        if stats is not None:
            for key, val in tally.items():
                setattr(stats, key, getattr(stats, key) + val)
    return accepted
