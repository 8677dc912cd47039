"""Dense and matrix-free linear-algebra kernels.

Operators act on column vectors or on blocks of columns, so every iterative
routine here works one block at a time. Eigen- and singular-vector signs are
normalized so the first nonzero coordinate is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import GapTooSmall, NoConvergence, NotAProjector, ZeroEigenvalue

DELTA_FLOOR = 1e-6
RANK_TOL = 1e-10
ITERATION_CONSTANT = 8.0
STALL_TOL = 1e-9

Apply = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LinearOperator:
    """Square operator given by its action.

    ``apply`` must accept a vector of length ``dim`` or a ``(dim, b)`` block.
    """

    dim: int
    apply: Apply
    cost_hint: int = 0
    symmetric: bool = True

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, symmetric: bool = True) -> "LinearOperator":
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        return cls(m.shape[0], lambda x: m @ x, cost_hint=m.size, symmetric=symmetric)

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.dim))


@dataclass(frozen=True)
class RectOperator:
    """Rectangular operator with its transpose, both block-capable."""

    shape: tuple[int, int]
    matvec: Apply
    rmatvec: Apply

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RectOperator":
        m = np.asarray(matrix, dtype=float)
        return cls(m.shape, lambda x: m @ x, lambda y: m.T @ y)


@dataclass(frozen=True)
class LowRankEig:
    """Orthonormal basis ``basis`` (D x n) with nonincreasing ``eigvals``.

    ``next_eigval`` is the solver's estimate of the (n+1)-th eigenvalue when one
    was available, and ``rel_gap`` the corresponding relative gap.
    """

    basis: np.ndarray
    eigvals: np.ndarray
    next_eigval: float = 0.0
    rel_gap: float = 1.0
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.T @ x)


@dataclass(frozen=True)
class RitzResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SingularPair:
    u: np.ndarray
    v: np.ndarray
    sigma: float
    ratio: float
    converged: bool
    iterations: int = 0
    sigmas: np.ndarray = field(default_factory=lambda: np.zeros(0))


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that their first nonzero coordinate is positive."""
    v = np.array(vectors, dtype=float, copy=True)
    if v.ndim == 1:
        return fix_signs(v[:, None])[:, 0]
    for j in range(v.shape[1]):
        col = v[:, j]
        scale = np.max(np.abs(col)) if col.size else 0.0
        if scale == 0.0:
            continue
        idx = int(np.argmax(np.abs(col) > 1e-12 * scale))
        if col[idx] < 0:
            v[:, j] = -col
    return v


def iteration_budget(dim: int, gap: float, constant: float = ITERATION_CONSTANT) -> int:
    """``ceil(C * log(D) / gap)``, the power-iteration step count."""
    gap = max(float(gap), 1e-12)
    return int(math.ceil(constant * math.log(max(dim, 2)) / gap))


def orth_block(z: np.ndarray) -> np.ndarray:
    """Orthonormal basis of a block's span: Cholesky QR twice, Householder on breakdown."""
    scale = np.linalg.norm(z, axis=0)
    if np.all(scale > 0):
        q = z / scale
        try:
            for _ in range(2):
                r = scipy.linalg.cholesky(q.T @ q, check_finite=False)
                q = q @ scipy.linalg.solve_triangular(r, np.eye(r.shape[0]), check_finite=False)
            if np.all(np.isfinite(q)):
                return q
        except np.linalg.LinAlgError:
            pass
    q, _ = np.linalg.qr(z)
    return q


def _start_block(dim: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((dim, size))


def _chebyshev_filter(op: LinearOperator, x: np.ndarray, ax: np.ndarray, cut: float, degree: int) -> np.ndarray:
    """Degree-``degree`` Chebyshev polynomial in ``op`` damping the interval [0, cut]."""
    e = c = 0.5 * cut
    prev = x
    cur = (ax - c * x) / e
    for _ in range(2, degree + 1):
        nxt = 2.0 * (op.apply(cur) - c * cur) / e - prev
        prev, cur = cur, nxt
    return cur


def subspace_iteration(
    op: LinearOperator,
    k: int,
    *,
    block: int | None = None,
    rel_tol: float = 1e-10,
    max_iters: int = 5000,
    seed: int = 0,
    check: int | None = None,
    degree: int = 8,
) -> RitzResult:
    """Top-``k`` Ritz pairs of a symmetric PSD operator by block power iteration.

    Between Rayleigh-Ritz projections the block is pushed through a Chebyshev
    polynomial that damps the spectrum below the smallest block Ritz value
    (``degree=1`` gives plain block power iteration). Iteration stops once the
    first ``check`` Ritz residuals fall below ``rel_tol * gap`` (or the double
    precision floor). ``max_iters`` counts operator applications.
    """
    dim = op.dim
    k = min(k, dim)
    size = min(dim, block if block is not None else k + max(k, 5))
    size = max(size, k)
    check = k if check is None else min(check, k)
    q = orth_block(op.apply(_start_block(dim, size, seed)))
    floor = 64 * np.finfo(float).eps * math.sqrt(dim)
    theta = np.zeros(size)
    x = q
    resid = np.full(size, np.inf)
    history: list[float] = []
    applies = 1
    while applies < max_iters:
        aq = op.apply(q)
        applies += 1
        h = q.T @ aq
        h = 0.5 * (h + h.T)
        theta, y = np.linalg.eigh(h)
        order = np.argsort(theta)[::-1]
        theta, y = theta[order], y[:, order]
        x = q @ y
        ax = aq @ y
        resid = np.linalg.norm(ax - x * theta, axis=0)
        top = max(abs(theta[0]), np.finfo(float).tiny)
        if check < size:
            gap = max(theta[check - 1] - theta[check], 0.0)
        else:
            gap = top
        target = max(rel_tol * max(gap, rel_tol * top), floor * top)
        worst = float(resid[:check].max())
        history.append(worst)
        stalled = len(history) > 8 and worst > 0.9 * history[-9] and worst <= STALL_TOL * top
        if worst <= target or stalled:
            return RitzResult(theta[:k], x[:, :k], resid[:k], applies, True)
        cut = float(theta[-1])
        if degree > 1 and size < dim and cut > 1e-3 * top:
            q = orth_block(_chebyshev_filter(op, x, ax, cut, degree))
            applies += degree - 1
        else:
            q = orth_block(ax)
    return RitzResult(theta[:k], x[:, :k], resid[:k], applies, False)


def gapped_eigendecomposition(
    op: LinearOperator,
    n: int,
    rel_tol: float = 1e-10,
    max_iters: int | None = None,
    *,
    seed: int = 0,
    delta_floor: float = DELTA_FLOOR,
    gap_hint: float | None = None,
    oversample: int | None = None,
    constant: float = ITERATION_CONSTANT,
) -> LowRankEig:
    """Top-``n`` eigendecomposition of a symmetric PSD operator with a gap check.

    Raises ``GapTooSmall`` when the estimated relative gap
    ``(lambda_n - lambda_{n+1}) / lambda_n`` is below ``delta_floor`` and
    ``NoConvergence`` when the budget runs out on a gapped spectrum.
    """
    if not 1 <= n <= op.dim:
        raise ValueError(f"n must lie in [1, {op.dim}], got {n}")
    p = oversample if oversample is not None else max(n, 5)
    block = min(op.dim, n + p)
    if max_iters is None:
        hint = gap_hint if gap_hint is not None and gap_hint > 0 else delta_floor
        max_iters = min(iteration_budget(op.dim, hint, constant), 20000)
    ritz = subspace_iteration(
        op, min(block, n + 1), block=block, rel_tol=rel_tol, max_iters=max_iters, seed=seed, check=n
    )
    vals = ritz.values
    lam_n = vals[n - 1]
    lam_next = float(vals[n]) if vals.size > n else 0.0
    lam_next = max(lam_next, 0.0)
    rel_gap = (lam_n - lam_next) / lam_n if lam_n > 0 else 0.0
    if rel_gap < delta_floor:
        raise GapTooSmall(
            f"relative eigengap {rel_gap:.3e} below floor {delta_floor:.1e}",
            quantity="eigen",
            measured=float(rel_gap),
        )
    if not ritz.converged:
        raise NoConvergence(f"eigensolver did not converge in {max_iters} iterations")
    basis = fix_signs(ritz.vectors[:, :n])
    return LowRankEig(basis, vals[:n].copy(), lam_next, float(rel_gap), ritz.iterations)


def pseudo_inverse_sqrt(eig: LowRankEig, power: float = -0.5, floor: float = 1e-12) -> LinearOperator:
    """``Q diag(lambda**power) Q^T`` as an operator, zero off ``span(Q)``."""
    if power not in (0.5, -0.5, -1.0, 1.0):
        raise ValueError("power must be one of +1/2, -1/2, -1, +1")
    if np.any(eig.eigvals <= floor):
        raise ZeroEigenvalue(f"eigenvalue {eig.eigvals.min():.3e} at or below floor {floor:.1e}")
    q = eig.basis
    scale = eig.eigvals**power

    def apply(x: np.ndarray) -> np.ndarray:
        c = q.T @ x
        c = c * (scale if c.ndim == 1 else scale[:, None])
        return q @ c

    return LinearOperator(q.shape[0], apply, cost_hint=2 * q.size)


def orthonormalize(columns: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Modified Gram-Schmidt run twice per column; drops dependent columns."""
    a = np.asarray(columns, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] == 0:
        return a.copy()
    norms = np.linalg.norm(a, axis=0)
    threshold = rank_tol * (norms.max() if norms.size else 0.0)
    basis: list[np.ndarray] = []
    for j in range(a.shape[1]):
        v = a[:, j].copy()
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if nv <= threshold or nv == 0.0:
            continue
        basis.append(v / nv)
    if not basis:
        return np.zeros((a.shape[0], 0))
    return np.column_stack(basis)


def _check_projector(p: np.ndarray, tol: float) -> None:
    scale = max(1.0, np.linalg.norm(p, 2))
    if np.linalg.norm(p - p.T, 2) > tol * scale or np.linalg.norm(p @ p - p, 2) > tol * scale:
        raise NotAProjector("input is not a symmetric idempotent matrix")


def subspace_sine_distance(p: np.ndarray, p_tilde: np.ndarray, tol: float = 1e-8) -> float:
    """``||P - P~ P||`` in spectral norm."""
    p = np.asarray(p, dtype=float)
    p_tilde = np.asarray(p_tilde, dtype=float)
    _check_projector(p, tol)
    _check_projector(p_tilde, tol)
    return float(np.linalg.norm(p - p_tilde @ p, 2))


def top_singular_pair(
    op: RectOperator,
    gap_hint: float = 0.1,
    max_iters: int | None = None,
    seed: int = 0,
    *,
    tol: float = 1e-10,
    constant: float = ITERATION_CONSTANT,
    start: np.ndarray | None = None,
) -> SingularPair:
    """Top singular triple by two-vector block power iteration.

    The second Ritz value gives the ratio estimate ``sigma_1 / sigma_2``. A
    zero operator or an exhausted budget yields ``converged=False``.
    """
    d1, d2 = op.shape
    size = min(2, d1, d2)
    if max_iters is None:
        max_iters = iteration_budget(max(d1, d2), gap_hint, constant)
    if start is not None:
        v = np.asarray(start, dtype=float).reshape(d2, -1)[:, :size]
    else:
        v = _start_block(d2, size, seed)
    v, _ = np.linalg.qr(v)
    floor = 64 * np.finfo(float).eps * math.sqrt(max(d1, d2))
    sig = np.zeros(size)
    u1 = np.zeros(d1)
    v1 = np.zeros(d2)
    converged = False
    it = 0
    for it in range(1, max(max_iters, 1) + 1):
        fv = op.matvec(v)
        if not np.any(fv):
            break
        uu, sig, zt = np.linalg.svd(fv, full_matrices=False)
        back = op.rmatvec(fv)
        if sig[0] <= 0.0:
            break
        z1 = zt[0]
        u1 = uu[:, 0]
        v1 = v @ z1
        ftu = back @ z1 / sig[0]
        resid = np.linalg.norm(ftu - sig[0] * v1)
        if resid <= max(tol, floor) * sig[0]:
            converged = True
            break
        v, _ = np.linalg.qr(back)
    else:
        it = max_iters
    if sig.size == 0 or sig[0] <= 0.0:
        return SingularPair(np.zeros(d1), np.zeros(d2), 0.0, 1.0, False, it, np.zeros(size))
    ratio = float(sig[0] / sig[1]) if size > 1 and sig[1] > 0 else math.inf
    fixed = fix_signs(u1)
    if fixed @ u1 < 0:
        v1 = -v1
    u1 = fixed
    return SingularPair(u1, v1, float(sig[0]), ratio, converged, it, sig.copy())
