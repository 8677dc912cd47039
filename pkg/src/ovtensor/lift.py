"""Lifting stage: from a symmetric 4-tensor to an orthogonal 3-tensor over R^{d^2}.

Steps: whiten the square reshaping, intersect ``span{a_i (x) a_i} (x) R^d`` with
the symmetric subspace, whiten the result in its first two modes and wrap the
projector onto it as an implicit tensor. Also hosts the condition quantities
(sigma_n, mu, kappa) computed densely from known components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateComponents, DimensionMismatch, GapTooSmall
from .implicit_tensor import FactoredMatrix, ImplicitTensor3, from_factors, mode_multiply
from .linalg import (
    DELTA_FLOOR,
    LinearOperator,
    LowRankEig,
    gapped_eigendecomposition,
    orthonormalize,
    pseudo_inverse_sqrt,
)
from .symmetry import apply_pi23_perp, apply_pi_sym

SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class SymTensor4:
    """Dense order-4 tensor stored flat in lexicographic order (last index fastest)."""

    d: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        if self.entries.shape != (self.d**4,):
            raise DimensionMismatch(f"expected {self.d ** 4} entries, got {self.entries.shape}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "SymTensor4":
        arr = np.asarray(arr, dtype=float)
        d = arr.shape[0]
        if arr.shape != (d, d, d, d):
            raise DimensionMismatch(f"expected a (d,d,d,d) array, got {arr.shape}")
        return cls(d, arr.reshape(-1).copy())

    @property
    def array(self) -> np.ndarray:
        d = self.d
        return self.entries.reshape(d, d, d, d)

    def symmetry_deviation(self) -> float:
        """Max entrywise deviation over the index permutations, relative to the max entry."""
        t = self.array
        scale = max(float(np.abs(t).max()), np.finfo(float).tiny)
        gens = [(1, 0, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2), (2, 3, 0, 1)]
        return max(float(np.abs(t - t.transpose(p)).max()) for p in gens) / scale

    def validate(self, tol: float = SYMMETRY_TOL) -> float:
        dev = self.symmetry_deviation()
        if dev > tol:
            raise ValueError(f"tensor is not symmetric: max relative deviation {dev:.3e}")
        return dev


@dataclass(frozen=True)
class LiftOutput:
    """``lifted`` holds the lifted tensor before mode-2 whitening; ``pi3_basis`` is B."""

    lifted: ImplicitTensor3
    pi3_basis: np.ndarray
    whitener: LowRankEig
    diagnostics: dict = field(default_factory=dict)

    def whitener_matrix(self) -> FactoredMatrix:
        w = self.whitener
        return FactoredMatrix.from_low_rank(w.basis, w.eigvals**-0.5, w.basis.T)

    def whitened(self) -> ImplicitTensor3:
        """The orthogonal 3-tensor: ``lifted`` with W applied along mode 2."""
        return mode_multiply(self.lifted, self.whitener_matrix(), 2)


@dataclass(frozen=True)
class ConditionReport:
    sigma_n: float
    mu: float
    kappa: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {"sigma_n": self.sigma_n, "mu": self.mu, "kappa": self.kappa, "degenerate": self.degenerate}


def square_reshape(t: SymTensor4) -> np.ndarray:
    d = t.d
    return t.entries.reshape(d * d, d * d).copy()


def _lifted_operator(q: np.ndarray, d: int) -> LinearOperator:
    """``Pi_{S (x) R^d} Pi_Sym Pi_{S (x) R^d}`` in coordinates of ``S (x) R^d``.

    A coordinate block ``c`` of shape (n*d, b) stands for ``(Q (x) Id) c``.
    """
    d2, n = q.shape

    def embed(c: np.ndarray) -> np.ndarray:
        b = c.shape[1]
        return (q @ c.reshape(n, d * b)).reshape(d2 * d, b)

    def restrict(v: np.ndarray) -> np.ndarray:
        b = v.shape[1]
        return (q.T @ v.reshape(d2, d * b)).reshape(n * d, b)

    def apply(c: np.ndarray) -> np.ndarray:
        single = c.ndim == 1
        cb = c[:, None] if single else c
        out = restrict(apply_pi_sym(embed(cb), d))
        return out[:, 0] if single else out

    return LinearOperator(n * d, apply, cost_hint=4 * n * d**3 + 6 * d**3)


def lift(
    t: SymTensor4,
    n: int,
    sigma_floor: float = 1e-10,
    kappa_floor: float = 0.0,
    *,
    seed: int = 0,
    rel_tol: float = 1e-10,
    delta_floor: float = DELTA_FLOOR,
) -> LiftOutput:
    """Lift ``t`` assuming ``n`` components.

    Raises ``GapTooSmall`` with ``quantity="sigma"`` if the square reshaping
    lacks a gapped top-``n`` eigenspace above ``sigma_floor``, and with
    ``quantity="kappa"`` if the symmetric-intersection step has relative gap
    below ``kappa_floor**2`` (``delta_floor`` when ``kappa_floor`` is 0).
    """
    d = t.d
    if not 1 <= n <= d * d:
        raise DimensionMismatch(f"n must lie in [1, d^2={d * d}], got {n}")
    m = square_reshape(t)
    m = 0.5 * (m + m.T)
    try:
        eig = gapped_eigendecomposition(
            LinearOperator.from_matrix(m), n, rel_tol, seed=seed, delta_floor=delta_floor
        )
    except GapTooSmall as exc:
        raise GapTooSmall(str(exc), quantity="sigma", measured=exc.measured) from exc
    if eig.eigvals[-1] < sigma_floor:
        raise GapTooSmall(
            f"n-th eigenvalue {eig.eigvals[-1]:.3e} below sigma floor {sigma_floor:.1e}",
            quantity="sigma",
            measured=float(eig.eigvals[-1]),
        )
    w = pseudo_inverse_sqrt(eig, -0.5)

    fallback = kappa_floor <= 0.0
    gap_floor = delta_floor if fallback else kappa_floor**2
    op = _lifted_operator(eig.basis, d)
    try:
        eig3 = gapped_eigendecomposition(
            op, n, rel_tol, seed=seed + 1, delta_floor=gap_floor, gap_hint=gap_floor
        )
    except GapTooSmall as exc:
        raise GapTooSmall(str(exc), quantity="kappa", measured=exc.measured) from exc
    q = eig.basis
    coords = eig3.basis
    r = (q @ coords.reshape(n, d * n)).reshape(d**3, n)

    b_prime = w.apply(r.reshape(d * d, d * n)).reshape(d**3, n)
    b = orthonormalize(b_prime)
    if b.shape[1] < n:
        raise GapTooSmall("whitened lifted basis lost rank", quantity="sigma", measured=float(eig.eigvals[-1]))
    diagnostics = {
        "sigma_n_est": float(eig.eigvals[-1]),
        "sigma_rel_gap": float(eig.rel_gap),
        "lift_eig_n": float(eig3.eigvals[-1]),
        "lift_eig_next": float(eig3.next_eigval),
        "lift_rel_gap": float(eig3.rel_gap),
        "kappa_floor_fallback": bool(fallback),
        "iterations": [int(eig.iterations), int(eig3.iterations)],
    }
    return LiftOutput(from_factors(b, b, d), b, eig, diagnostics)


def _as_components(components) -> np.ndarray:
    a = np.atleast_2d(np.asarray(components, dtype=float))
    if a.shape[1] < 2:
        raise DimensionMismatch("components must live in R^d with d >= 2")
    return a


def complement_basis(a: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Orthonormal basis (d x (d-1)) of the complement of ``a``.

    Default: columns 2..d of the Householder reflection sending ``a`` to ``e_1``.
    With ``rng``, a random rotation of that basis.
    """
    a = np.asarray(a, dtype=float)
    d = a.size
    nrm = np.linalg.norm(a)
    if nrm == 0.0:
        raise DegenerateComponents("zero component")
    v = a / nrm
    v = v.copy()
    v[0] += 1.0 if v[0] >= 0 else -1.0
    h = np.eye(d) - 2.0 * np.outer(v, v) / (v @ v)
    basis = h[:, 1:]
    if rng is not None:
        rot, _ = np.linalg.qr(rng.standard_normal((d - 1, d - 1)))
        basis = basis @ rot
    return basis


def kappa_matrix_h(components, rng: np.random.Generator | None = None) -> np.ndarray:
    """Columns ``a_i (x) a_i (x) b_{i,j}`` over complement bases, shape (d^3, n(d-1))."""
    a = _as_components(components)
    n, d = a.shape
    blocks = []
    for ai in a:
        comp = complement_basis(ai, rng)
        aa = np.outer(ai, ai).reshape(d * d)
        blocks.append(np.einsum("p,qj->pqj", aa, comp).reshape(d**3, d - 1))
    return np.hstack(blocks)


def kappa(components, *, strict: bool = False, rng: np.random.Generator | None = None) -> float:
    """Smallest singular value of ``Pi23_perp R`` with R an orthonormalization of H.

    Solved as the generalized symmetric problem ``H^T Pi23_perp H x = lam H^T H x``,
    whose smallest eigenvalue is kappa^2. A numerically rank-deficient H gives
    0 (or ``DegenerateComponents`` when ``strict``).
    """
    a = _as_components(components)
    d = a.shape[1]
    h = kappa_matrix_h(a, rng)
    gram = h.T @ h
    ev = np.linalg.eigvalsh(gram)
    if h.shape[1] > h.shape[0] or ev[0] <= 1e-20 * ev[-1]:
        if strict:
            raise DegenerateComponents("H is numerically rank deficient")
        return 0.0
    kh = apply_pi23_perp(h, d)
    lhs = h.T @ kh
    lhs = 0.5 * (lhs + lhs.T)
    lam = scipy.linalg.eigh(lhs, gram, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(np.sqrt(max(lam, 0.0)))


def condition_quantities(components) -> ConditionReport:
    """sigma_n, mu and kappa of a component set, all from dense small Gram matrices."""
    a = _as_components(components)
    n = a.shape[0]
    g = a @ a.T
    sig = np.linalg.eigvalsh(g**2)[::-1]
    sigma_n = float(sig[n - 1]) if sig.size >= n else 0.0
    norms = np.sqrt(np.diag(g))
    g3 = g**3 / np.outer(norms, norms)
    mu = float(np.linalg.eigvalsh(g3)[-1])
    h = kappa_matrix_h(a)
    degenerate = h.shape[1] > h.shape[0]
    if not degenerate:
        ev = np.linalg.eigvalsh(h.T @ h)
        degenerate = bool(ev[0] <= 1e-20 * ev[-1])
    k = 0.0 if degenerate else kappa(a)
    return ConditionReport(max(sigma_n, 0.0), mu, k, degenerate)
