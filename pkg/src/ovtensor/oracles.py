"""Dense reference implementations used by the self-test and the test suite.

Everything here builds explicit matrices from index formulas and calls dense
LAPACK routines, so it shares no code path with the matrix-free kernels.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np

from .symmetry import pi_sym_coefficient


def dense_pi_sym(d: int) -> np.ndarray:
    """Order-3 symmetric projector assembled entrywise."""
    return _dense_pi_sym(d).copy()


@functools.lru_cache(maxsize=8)
def _dense_pi_sym(d: int) -> np.ndarray:
    idx = list(itertools.product(range(d), repeat=3))
    m = np.zeros((d**3, d**3))
    for r, row in enumerate(idx):
        for c, col in enumerate(idx):
            if sorted(row) == sorted(col):
                m[r, c] = pi_sym_coefficient(row, col)
    return m


def dense_p23(d: int) -> np.ndarray:
    m = np.zeros((d**3, d**3))
    for i, j, k in itertools.product(range(d), repeat=3):
        m[i * d * d + j * d + k, i * d * d + k * d + j] = 1.0
    return m


def unit_fourth_moment(d: int) -> np.ndarray:
    """``E[(a a^T) (x) (a a^T)]`` for uniform unit ``a``: ``(dd + perms) / (d (d + 2))``."""
    e = np.eye(d)
    t = (
        np.einsum("ij,kl->ijkl", e, e)
        + np.einsum("ik,jl->ijkl", e, e)
        + np.einsum("il,jk->ijkl", e, e)
    ) / (d * (d + 2))
    return t.reshape(d * d, d * d)


def psd_power(m: np.ndarray, power: float, tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose power of a symmetric PSD matrix."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    keep = w > tol * max(w.max(), 0.0)
    return (v[:, keep] * w[keep] ** power) @ v[:, keep].T


def top_projector(m: np.ndarray, n: int) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    top = v[:, np.argsort(w)[::-1][:n]]
    return top @ top.T


def span_projector(columns: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    u, s, _ = np.linalg.svd(columns, full_matrices=False)
    u = u[:, s > tol * s.max()]
    return u @ u.T


def implicit_dense(u: np.ndarray, v: np.ndarray, d: int) -> np.ndarray:
    """``T[(i,i'),(j,j'),(k,k')] = (U V^T)[(i,i',j),(k,k',j')]`` by direct indexing."""
    m = u @ v.T
    d2 = d * d
    t = np.zeros((d2, d2, d2))
    for i, ip, j, jp, k, kp in itertools.product(range(d), repeat=6):
        t[i * d + ip, j * d + jp, k * d + kp] = m[(i * d + ip) * d + j, (k * d + kp) * d + jp]
    return t


def dense_contract(t: np.ndarray, x: np.ndarray, y: np.ndarray, modes: tuple[int, int]) -> np.ndarray:
    if modes == (1, 2):
        return np.einsum("abc,a,b->c", t, x, y)
    if modes == (1, 3):
        return np.einsum("abc,a,c->b", t, x, y)
    return np.einsum("abc,b,c->a", t, x, y)


def dense_mode_multiply(t: np.ndarray, r: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(r, t, axes=(1, mode - 1)), 0, mode - 1)


def dense_truncate(t: np.ndarray, singleton: int, k: int | None = None) -> np.ndarray:
    """Clip singular values above 1 of the reshaping that isolates ``singleton``.

    With ``k`` only the ``k`` largest are eligible; otherwise all are clipped.
    """
    d2 = t.shape[0]
    moved = np.moveaxis(t, singleton - 1, 2).reshape(d2 * d2, d2)
    u, s, vt = np.linalg.svd(moved, full_matrices=False)
    new = np.minimum(s, 1.0)
    if k is not None:
        new[k:] = s[k:]
    clipped = (u * new) @ vt
    return np.moveaxis(clipped.reshape(d2, d2, d2), 2, singleton - 1)


def reshaping_singular_values(t: np.ndarray, singleton: int) -> np.ndarray:
    d2 = t.shape[0]
    return np.linalg.svd(np.moveaxis(t, singleton - 1, 2).reshape(d2 * d2, d2), compute_uv=False)


def whitener(components: np.ndarray, e: np.ndarray | None = None) -> np.ndarray:
    a = np.atleast_2d(components)
    n, d = a.shape
    sq = np.einsum("ni,nj->nij", a, a).reshape(n, d * d)
    q = sq.T @ sq
    if e is not None:
        q = q + e
        w, v = np.linalg.eigh(0.5 * (q + q.T))
        top = np.argsort(w)[::-1][:n]
        return (v[:, top] * w[top] ** -0.5) @ v[:, top].T
    return psd_power(q, -0.5)


def true_pi3(components: np.ndarray) -> np.ndarray:
    """Projector onto ``span{(W a_i^{(x)2}) (x) a_i}``."""
    a = np.atleast_2d(components)
    n, d = a.shape
    w = whitener(a)
    cols = np.array([np.kron(w @ np.kron(ai, ai), ai) for ai in a]).T
    return span_projector(cols)


def whitened_target(components: np.ndarray) -> np.ndarray:
    """``sum_i ||a_i||^{-2} (W a_i^{(x)2})^{(x)3}`` as a dense (d^2, d^2, d^2) array."""
    a = np.atleast_2d(components)
    w = whitener(a)
    b = np.array([w @ np.kron(ai, ai) / np.linalg.norm(ai) ** (2.0 / 3.0) for ai in a])
    return np.einsum("na,nb,nc->abc", b, b, b)


def dense_lift(tensor: np.ndarray, n: int) -> dict:
    """The lifting pipeline with dense eigendecompositions.

    Returns the whitener, ``Pi_{S3}``, ``Pi3`` and the whitened lifted tensor.
    """
    d = tensor.shape[0]
    m = tensor.reshape(d * d, d * d)
    m = 0.5 * (m + m.T)
    w_, v_ = np.linalg.eigh(m)
    top = np.argsort(w_)[::-1][:n]
    q, lam = v_[:, top], w_[top]
    w = (q * lam**-0.5) @ q.T
    ps = np.kron(q @ q.T, np.eye(d))
    op = ps @ dense_pi_sym(d) @ ps
    ev, evec = np.linalg.eigh(0.5 * (op + op.T))
    r = evec[:, np.argsort(ev)[::-1][:n]]
    bp = np.kron(w, np.eye(d)) @ r
    b, _ = np.linalg.qr(bp)
    pi3 = b @ b.T
    d2 = d * d
    lifted = np.zeros((d2, d2, d2))
    mat = pi3
    for i, ip, j, jp, k, kp in itertools.product(range(d), repeat=6):
        lifted[i * d + ip, j * d + jp, k * d + kp] = mat[(i * d + ip) * d + j, (k * d + kp) * d + jp]
    lifted = dense_mode_multiply(lifted, w, 2)
    return {"W": w, "pi_s3": r @ r.T, "pi3": pi3, "lifted": lifted, "eigs": np.sort(ev)[::-1]}


def identifiability_gap(components: np.ndarray) -> float:
    """``||Pi_{S (x) R^d} Pi_Sym Pi_{S (x) R^d} - Pi_{S3}||`` assembled densely."""
    a = np.atleast_2d(components)
    n, d = a.shape
    sq = np.array([np.kron(ai, ai) for ai in a]).T
    cube = np.array([np.kron(np.kron(ai, ai), ai) for ai in a]).T
    ps = np.kron(span_projector(sq), np.eye(d))
    lhs = ps @ dense_pi_sym(d) @ ps
    return float(np.linalg.norm(lhs - span_projector(cube), 2))


def kappa_dense(components: np.ndarray) -> float:
    """Smallest singular value of ``(1/2)(Id - P23) (H H^T)^{-1/2} H`` via explicit SVDs."""
    from .lift import kappa_matrix_h

    a = np.atleast_2d(components)
    d = a.shape[1]
    h = kappa_matrix_h(a)
    u, s, vt = np.linalg.svd(h, full_matrices=False)
    r = u @ vt
    k = 0.5 * (np.eye(d**3) - dense_p23(d)) @ r
    return float(np.linalg.svd(k, compute_uv=False).min())


def planted_vector(a: np.ndarray, corr2: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector with squared correlation ``corr2`` with unit ``a``."""
    w = rng.standard_normal(a.size)
    w -= (w @ a) * a
    w /= np.linalg.norm(w)
    return np.sqrt(corr2) * a + np.sqrt(1.0 - corr2) * w


def random_psd(dim: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((dim, rank))
    return x @ x.T
