"""Rank-n implicit order-3 tensors over R^{d^2}.

A tensor ``T`` with modes indexed by pairs is stored through a d^3 x d^3
factorization ``U V^T`` with

    T[(i,i'), (j,j'), (k,k')] = (U V^T)[(i,i',j), (k,k',j')],

so mode 2 is split between the row and the column index. Per-mode multipliers
``R`` (``T -> R applied along a mode``) are kept in factored form and applied
lazily: inputs entering a multiplied mode are hit by ``R^T``, outputs leaving it
by ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import (
    DimensionCapExceeded,
    DimensionMismatch,
    RankBudgetExceeded,
    UnsupportedMode2Multiplier,
)
from .linalg import LinearOperator, RectOperator, subspace_iteration
from .symmetry import OpCounter

DENSIFY_CAP = 8
DEFAULT_DELTA = 0.1


@dataclass(frozen=True)
class FactoredMatrix:
    """``scale * Id + left @ right.T`` acting on R^dim."""

    dim: int
    scale: float
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self) -> None:
        if self.left.shape != self.right.shape or self.left.shape[0] != self.dim:
            raise DimensionMismatch("factor shapes disagree")

    @classmethod
    def identity(cls, dim: int) -> "FactoredMatrix":
        return cls(dim, 1.0, np.zeros((dim, 0)), np.zeros((dim, 0)))

    @classmethod
    def from_low_rank(cls, p: np.ndarray, sigma: np.ndarray, qt: np.ndarray) -> "FactoredMatrix":
        """``P diag(sigma) Q^T``."""
        p = np.asarray(p, dtype=float)
        return cls(p.shape[0], 0.0, p * np.asarray(sigma, dtype=float), np.asarray(qt, dtype=float).T.copy())

    @classmethod
    def from_dense(cls, m: np.ndarray) -> "FactoredMatrix":
        m = np.asarray(m, dtype=float)
        return cls(m.shape[0], 0.0, m.copy(), np.eye(m.shape[0]))

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * x + self.left @ (self.right.T @ x)

    def apply_t(self, x: np.ndarray) -> np.ndarray:
        return self.scale * x + self.right @ (self.left.T @ x)

    def dense(self) -> np.ndarray:
        return self.scale * np.eye(self.dim) + self.left @ self.right.T

    def gram(self) -> np.ndarray:
        """Dense ``M^T M``."""
        m = self.dense()
        return m.T @ m

    def compose(self, other: "FactoredMatrix") -> "FactoredMatrix":
        """``self @ other``; the rank grows additively and is capped at ``dim``."""
        s, t = self.scale, other.scale
        x, y, xo, yo = self.left, self.right, other.left, other.right
        left = np.hstack([x, s * xo + x @ (y.T @ xo)])
        right = np.hstack([t * y, yo])
        out = FactoredMatrix(self.dim, s * t, left, right)
        if out.rank > self.dim:
            dense = out.dense() - out.scale * np.eye(self.dim)
            out = FactoredMatrix(self.dim, out.scale, dense, np.eye(self.dim))
        return out


def as_factored(r: FactoredMatrix | np.ndarray) -> FactoredMatrix:
    return r if isinstance(r, FactoredMatrix) else FactoredMatrix.from_dense(r)


def _apply(r: FactoredMatrix | None, x: np.ndarray) -> np.ndarray:
    return x if r is None else r.apply(x)


def _apply_t(r: FactoredMatrix | None, x: np.ndarray) -> np.ndarray:
    return x if r is None else r.apply_t(x)


_RESHAPINGS = {
    "12|3": 3,
    "{1,2}{3}": 3,
    "3|12": 3,
    "23|1": 1,
    "{2,3}{1}": 1,
    "1|23": 1,
}


@dataclass(frozen=True)
class ImplicitTensor3:
    d: int
    U: np.ndarray
    V: np.ndarray
    mults: tuple[FactoredMatrix | None, FactoredMatrix | None, FactoredMatrix | None] = (None, None, None)

    @property
    def n(self) -> int:
        return self.U.shape[1]

    @property
    def pending(self) -> tuple[bool, bool, bool]:
        return tuple(m is not None for m in self.mults)  # type: ignore[return-value]

    @cached_property
    def _ur(self) -> np.ndarray:
        return self.U.reshape(self.d * self.d, self.d, self.n)

    @cached_property
    def _vr(self) -> np.ndarray:
        return self.V.reshape(self.d * self.d, self.d, self.n)

    @cached_property
    def effective_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """``(U, V)`` as (d^2, d, n) arrays with the mode-1 and mode-3 multipliers absorbed."""
        d2 = self.d * self.d
        ue = _apply(self.mults[0], self._ur.reshape(d2, -1)).reshape(self._ur.shape)
        ve = _apply(self.mults[2], self._vr.reshape(d2, -1)).reshape(self._vr.shape)
        return ue, ve

    def _mode_vector(self, y: np.ndarray) -> np.ndarray:
        return y.reshape(self.d, self.d, *y.shape[1:])

    def _apply_23(self, g: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Base contraction with mode-2 vector ``g`` and a mode-3 block ``y``; output in mode 1."""
        d, n = self.d, self.n
        b = y.shape[1]
        by = (self._vr.reshape(d * d, d * n).T @ y).reshape(d, n * b)
        c = (g.reshape(d, d) @ by).reshape(d * n, b)
        return self._ur.reshape(d * d, d * n) @ c

    def _apply_12(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Base contraction with a mode-1 block ``x`` and mode-2 vector ``g``; output in mode 3."""
        d, n = self.d, self.n
        b = x.shape[1]
        ax = (self._ur.reshape(d * d, d * n).T @ x).reshape(d, n * b)
        c = (g.reshape(d, d).T @ ax).reshape(d * n, b)
        return self._vr.reshape(d * d, d * n) @ c

    def flattening(self, g: np.ndarray) -> RectOperator:
        """``F[a, c] = sum_b T[a, b, c] g[b]`` as an operator from mode 3 to mode 1."""
        d2 = self.d * self.d
        g = np.asarray(g, dtype=float)
        if g.shape != (d2,):
            raise DimensionMismatch(f"g must have length {d2}")
        gp = _apply_t(self.mults[1], g)
        r1, r3 = self.mults[0], self.mults[2]

        def matvec(v: np.ndarray) -> np.ndarray:
            single = v.ndim == 1
            vb = v[:, None] if single else v
            out = _apply(r1, self._apply_23(gp, _apply_t(r3, vb)))
            return out[:, 0] if single else out

        def rmatvec(u: np.ndarray) -> np.ndarray:
            single = u.ndim == 1
            ub = u[:, None] if single else u
            out = _apply(r3, self._apply_12(_apply_t(r1, ub), gp))
            return out[:, 0] if single else out

        return RectOperator((d2, d2), matvec, rmatvec)


def from_factors(U: np.ndarray, V: np.ndarray, d: int, n: int | None = None) -> ImplicitTensor3:
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if V.ndim == 1:
        V = V[:, None]
    if n is None:
        n = U.shape[1]
    if U.shape != (d**3, n) or V.shape != (d**3, n):
        raise DimensionMismatch(f"factors must be {d ** 3} x {n}, got {U.shape} and {V.shape}")
    return ImplicitTensor3(d, U, V)


def contract(
    t: ImplicitTensor3,
    x: np.ndarray,
    y: np.ndarray,
    modes: tuple[int, int],
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Contract two modes with vectors; ``x`` feeds the lower mode, ``y`` the higher one."""
    d, n = t.d, t.n
    d2 = d * d
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (d2,) or y.shape != (d2,):
        raise DimensionMismatch(f"contraction vectors must have length {d2}")
    modes = tuple(modes)  # type: ignore[assignment]
    r1, r2, r3 = t.mults
    if counter is not None:
        counter.add("contract", 2 * n * d**3 + sum(2 * d2 * m.rank + d2 for m in t.mults if m is not None))
    if modes == (1, 2):
        return _apply(r3, t._apply_12(_apply_t(r1, x)[:, None], _apply_t(r2, y))[:, 0])
    if modes == (2, 3):
        return _apply(r1, t._apply_23(_apply_t(r2, x), _apply_t(r3, y)[:, None])[:, 0])
    if modes == (1, 3):
        xp = _apply_t(r1, x)
        yp = _apply_t(r3, y)
        ax = (t._ur.reshape(d2, d * n).T @ xp).reshape(d, n)
        by = (t._vr.reshape(d2, d * n).T @ yp).reshape(d, n)
        return _apply(r2, (ax @ by.T).reshape(d2))
    raise ValueError(f"modes must be (1,2), (1,3) or (2,3); got {modes}")


def mode_multiply(t: ImplicitTensor3, r: FactoredMatrix | np.ndarray, mode: int) -> ImplicitTensor3:
    """Represent ``R`` applied along ``mode``; composes with any pending multiplier."""
    if mode not in (1, 2, 3):
        raise ValueError("mode must be 1, 2 or 3")
    r = as_factored(r)
    if r.dim != t.d * t.d:
        raise DimensionMismatch(f"multiplier must act on R^{t.d * t.d}")
    mults = list(t.mults)
    old = mults[mode - 1]
    mults[mode - 1] = r if old is None else r.compose(old)
    return replace(t, mults=tuple(mults))


def densify(t: ImplicitTensor3, cap: int = DENSIFY_CAP) -> np.ndarray:
    """Dense (d^2, d^2, d^2) array including pending multipliers."""
    d = t.d
    if d > cap:
        raise DimensionCapExceeded(f"d={d} exceeds densify cap {cap}")
    d2 = d * d
    dense = np.einsum("ajm,gkm->ajkg", t._ur, t._vr).reshape(d2, d2, d2)
    for axis, m in enumerate(t.mults):
        if m is not None:
            dense = np.moveaxis(np.tensordot(m.dense(), dense, axes=(1, axis)), 0, axis)
    return dense


def _pair_gram(f: np.ndarray) -> np.ndarray:
    """``P[j, m, k, l] = sum_a f[a, j, m] f[a, k, l]`` for f of shape (d^2, d, n)."""
    d2, d, n = f.shape
    flat = f.reshape(d2, d * n)
    return (flat.T @ flat).reshape(d, n, d, n)


def _core(pair: np.ndarray, g2: np.ndarray | None, free_second: bool) -> np.ndarray:
    """Core matrix (n*d x n*d) of a singleton-mode Gram, mode-2 Gram ``g2`` inserted.

    ``pair`` holds the Gram of the factor that is summed out. With
    ``free_second`` the surviving mode-2 index is the second of the pair (j'),
    otherwise the first (j).
    """
    d, n = pair.shape[0], pair.shape[1]
    if g2 is None:
        inner = np.einsum("jmjn->mn", pair)
        return np.kron(inner, np.eye(d))
    g = g2.reshape(d, d, d, d)
    if free_second:
        core = np.einsum("jmkn,jxky->mxny", pair, g, optimize=True)
    else:
        core = np.einsum("xmyn,jxky->mjnk", pair, g, optimize=True)
    return core.reshape(n * d, n * d)


def reshaping_gram(t: ImplicitTensor3, singleton: int) -> LinearOperator:
    """Gram operator ``X^T X`` of the reshaping whose columns are indexed by ``singleton``."""
    ue, ve = t.effective_factors
    r2 = t.mults[1]
    g2 = None if r2 is None else r2.gram()
    d, n = t.d, t.n
    if singleton == 3:
        core = _core(_pair_gram(ue), g2, free_second=True)
        z = ve.transpose(2, 1, 0).reshape(n * d, d * d)
    elif singleton == 1:
        core = _core(_pair_gram(ve), g2, free_second=False)
        z = ue.transpose(2, 1, 0).reshape(n * d, d * d)
    else:
        raise ValueError("singleton mode must be 1 or 3")

    def apply(y: np.ndarray) -> np.ndarray:
        return z.T @ (core @ (z @ y))

    return LinearOperator(d * d, apply, cost_hint=2 * z.size + core.size)


def spectral_truncate(
    t: ImplicitTensor3,
    reshaping: str = "12|3",
    k: int | None = None,
    delta: float = DEFAULT_DELTA,
    *,
    allow_mode2: bool = True,
    seed: int = 0,
    rel_tol: float = 1e-12,
    max_iters: int = 2000,
) -> ImplicitTensor3:
    """Clip the top-``k`` singular values of a rectangular reshaping at 1.

    ``reshaping`` is ``"12|3"`` (rows modes 1,2; columns mode 3) or ``"23|1"``.
    The clip is realized as the multiplier ``Id + sum (1/s - 1) p p^T`` over
    right singular pairs with ``s > 1`` on the singleton mode. ``delta`` is the
    slack allowed in the Frobenius error bound; the eigensolver tolerance is
    far tighter.
    """
    if reshaping not in _RESHAPINGS:
        raise ValueError(f"unsupported reshaping {reshaping!r}")
    if t.mults[1] is not None and not allow_mode2:
        raise UnsupportedMode2Multiplier("mode-2 multiplier pending and allow_mode2 is False")
    if not delta > 0:
        raise ValueError("delta must be positive")
    budget = 2 * t.n
    k = budget if k is None else k
    if k < 1 or k > budget:
        raise RankBudgetExceeded(f"k={k} outside [1, 2n={budget}]")
    singleton = _RESHAPINGS[reshaping]
    d2 = t.d * t.d
    k = min(k, d2)
    op = reshaping_gram(t, singleton)
    block = min(d2, k + max(k, 10))
    ritz = subspace_iteration(op, k, block=block, rel_tol=rel_tol, max_iters=max_iters, seed=seed)
    sig = np.sqrt(np.clip(ritz.values, 0.0, None))
    keep = sig > 1.0
    if not np.any(keep):
        return t
    p = ritz.vectors[:, keep]
    coeff = 1.0 / sig[keep] - 1.0
    clip = FactoredMatrix(d2, 1.0, p * coeff, p)
    return mode_multiply(t, clip, singleton)


def frobenius_norm(t: ImplicitTensor3) -> float:
    ue, ve = t.effective_factors
    r2 = t.mults[1]
    if r2 is None:
        u = ue.reshape(-1, t.n)
        v = ve.reshape(-1, t.n)
        val = float(np.sum((u.T @ u) * (v.T @ v)))
    else:
        core = _core(_pair_gram(ue), r2.gram(), free_second=True)
        d, n = t.d, t.n
        pv = _pair_gram(ve)
        val = float(np.einsum("mxny,xmyn->", core.reshape(n, d, n, d), pv))
    return float(np.sqrt(max(val, 0.0)))
