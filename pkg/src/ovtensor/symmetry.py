"""Structured operators on (R^d)^{x3} and R^{d^2}.

Vectors over three modes use the lexicographic layout ``(i, j, k) -> i*d*d + j*d + k``
and vectors over two modes ``(i, j) -> i*d + j``. Every function accepts a single
vector or a block whose columns are such vectors.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterator

import numpy as np

_PERMS3 = tuple(permutations(range(3)))
_FAULTS: set[str] = set()


@dataclass
class OpCounter:
    """Tally of scalar operations, filled in by the ``counter=`` hooks."""

    counts: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, ops: int) -> None:
        self.counts[name] = self.counts.get(name, 0) + int(ops)

    def total(self) -> int:
        return sum(self.counts.values())


@contextlib.contextmanager
def inject_fault(name: str) -> Iterator[None]:
    """Debug hook: corrupt a named kernel while the context is active."""
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


def _as_cube(v: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    if v.shape[0] != d**3:
        raise ValueError(f"expected leading dimension {d ** 3}, got {v.shape[0]}")
    return v.reshape((d, d, d) + (() if single else (v.shape[1],))), single


def _flat(t: np.ndarray, d: int, single: bool) -> np.ndarray:
    return t.reshape(d**3) if single else t.reshape(d**3, -1)


def flat_index(idx: tuple[int, ...], d: int) -> int:
    """Lexicographic position of a multi-index, last index fastest."""
    out = 0
    for i in idx:
        out = out * d + i
    return out


def pi_sym_coefficient(row: tuple[int, int, int], col: tuple[int, int, int]) -> float:
    """Entry of the order-3 symmetric projector.

    Nonzero only when ``col`` is a rearrangement of ``row``, where it equals one
    over the number of distinct rearrangements (1, 3 or 6).
    """
    if sorted(row) != sorted(col):
        return 0.0
    counts = [row.count(v) for v in set(row)]
    return math.prod(math.factorial(c) for c in counts) / 6.0


def apply_pi_sym(v: np.ndarray, d: int, counter: OpCounter | None = None) -> np.ndarray:
    """Average over the six index permutations (the projector onto Sym^3)."""
    t, single = _as_cube(v, d)
    extra = tuple(range(3, t.ndim))
    out = t.copy()
    for p in _PERMS3[1:]:
        out += t.transpose(p + extra)
    out /= 6.0
    if "pi_sym" in _FAULTS:
        out = out.copy()
        out.reshape(-1)[0] += 0.5 * t.reshape(-1)[0]
    if counter is not None:
        counter.add("pi_sym", 6 * t.size)
    return _flat(out, d, single)


def apply_p23(v: np.ndarray, d: int, counter: OpCounter | None = None) -> np.ndarray:
    """Swap the second and third modes."""
    t, single = _as_cube(v, d)
    extra = tuple(range(3, t.ndim))
    if counter is not None:
        counter.add("p23", t.size)
    return _flat(np.ascontiguousarray(t.transpose((0, 2, 1) + extra)), d, single)


def apply_pi23(v: np.ndarray, d: int) -> np.ndarray:
    """Projector onto tensors symmetric in modes 2 and 3."""
    return 0.5 * (np.asarray(v, dtype=float) + apply_p23(v, d))


def apply_pi23_perp(v: np.ndarray, d: int) -> np.ndarray:
    """``(v - P23 v) / 2``."""
    return 0.5 * (np.asarray(v, dtype=float) - apply_p23(v, d))


def apply_sym2(x: np.ndarray, d: int) -> np.ndarray:
    """Order-2 symmetric projector ``(x + swap(x)) / 2``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    m = x.reshape((d, d) + (() if single else (x.shape[1],)))
    extra = tuple(range(2, m.ndim))
    out = 0.5 * (m + m.transpose((1, 0) + extra))
    return out.reshape(d * d) if single else out.reshape(d * d, -1)


def phi(d: int) -> np.ndarray:
    """``sum_i e_i (x) e_i``."""
    return np.eye(d).reshape(d * d)


def fourth_moment_constants(d: int) -> tuple[float, float]:
    """``(d1, d2)`` of the closed-form inverse square root of ``E[(aa^T)(x)(aa^T)]``."""
    d1 = math.sqrt((d * d + 2 * d) / 2.0)
    d2 = (math.sqrt((d + 2) / 2.0) - 1.0) / math.sqrt(d)
    return d1, d2


def fourth_moment_inv_sqrt_apply(x: np.ndarray, d: int) -> np.ndarray:
    """Apply ``d1 * Pi_Sym2 - d2 * Phi Phi^T`` for a uniformly random unit ``a``."""
    d1, d2 = fourth_moment_constants(d)
    f = phi(d)
    x = np.asarray(x, dtype=float)
    proj = f @ x
    corr = np.multiply.outer(f, proj) if x.ndim > 1 else f * proj
    return d1 * apply_sym2(x, d) - d2 * corr
