"""Synthetic instances: component ensembles, tensor assembly, noise and perturbation checks."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import DegenerateSample, DimensionMismatch, HypothesisViolated
from .lift import SymTensor4, complement_basis
from .symmetry import apply_p23, fourth_moment_constants, fourth_moment_inv_sqrt_apply

ENSEMBLES = ("spherical", "sparse", "hypercube", "spiked")
RESAMPLE_CAP = 100
EPS_MAX = 0.1  # conservative cap inside the lemma's eps <= 1/9
_PERMS4 = tuple(itertools.permutations(range(4)))


@dataclass(frozen=True)
class Ensemble:
    kind: str = "spherical"
    spike_lambda: float | None = None
    sparsity_fraction: float = 0.25
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.kind!r}; expected one of {ENSEMBLES}")
        if self.spike_lambda is not None and self.spike_lambda <= 0:
            raise ValueError("spike_lambda must be positive")
        if not 0 < self.sparsity_fraction <= 1:
            raise ValueError("sparsity_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "spectral_bounded"
    eta: float = 0.0
    eps1: float = 0.0
    eps2: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("spectral_bounded", "dictionary_split"):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if self.eta < 0 or self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("noise magnitudes must be nonnegative")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


def _as_ensemble(ensemble: Ensemble | str) -> Ensemble:
    return ensemble if isinstance(ensemble, Ensemble) else Ensemble(ensemble)


def _draw_one(ens: Ensemble, d: int, rng: np.random.Generator, spike: np.ndarray | None) -> np.ndarray:
    if ens.kind == "spherical":
        return rng.standard_normal(d)
    if ens.kind == "sparse":
        k = max(1, int(round(ens.sparsity_fraction * d)))
        v = np.zeros(d)
        v[rng.choice(d, size=k, replace=False)] = rng.standard_normal(k)
        return v
    if ens.kind == "hypercube":
        return rng.integers(0, 2, size=d).astype(float)
    lam = ens.spike_lambda if ens.spike_lambda is not None else d / 2.0
    return rng.standard_normal(d) + math.sqrt(lam) * rng.standard_normal() * spike


def spike_direction(d: int, seed: int) -> np.ndarray:
    u = _stream(seed, 1).standard_normal(d)
    return u / np.linalg.norm(u)


def gen_components(ensemble: Ensemble | str, d: int, n: int, seed: int) -> np.ndarray:
    """``n`` samples as rows of an (n, d) array; component ``i`` uses its own stream."""
    if d < 2:
        raise ValueError("d must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    ens = _as_ensemble(ensemble)
    spike = spike_direction(d, seed) if ens.kind == "spiked" else None
    out = np.empty((n, d))
    for i in range(n):
        rng = _stream(seed, 0, i)
        for _ in range(RESAMPLE_CAP):
            v = _draw_one(ens, d, rng, spike)
            nrm = np.linalg.norm(v)
            if nrm > 0.0:
                break
        else:
            raise DegenerateSample(f"component {i}: {RESAMPLE_CAP} zero draws in a row")
        out[i] = v / nrm if ens.normalize else v
    return out


def build_tensor(components) -> SymTensor4:
    a = np.atleast_2d(np.asarray(components, dtype=float))
    return SymTensor4.from_array(np.einsum("ni,nj,nk,nl->ijkl", a, a, a, a))


def square_spectral_norm(t: SymTensor4 | np.ndarray) -> float:
    arr = t.array if isinstance(t, SymTensor4) else np.asarray(t)
    d = arr.shape[0]
    return float(np.linalg.norm(arr.reshape(d * d, d * d), 2))


def symmetrized_gaussian(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((d, d, d, d))
    return sum(g.transpose(p) for p in _PERMS4) / len(_PERMS4)


def noise_parts(t: SymTensor4, model: NoiseModel, seed: int) -> dict[str, np.ndarray]:
    """Noise tensors (d,d,d,d) keyed by name for the ``spectral_bounded`` model.

    One symmetrized Gaussian direction scaled to square-reshaping norm ``eta``.
    """
    d = t.d
    rng = _stream(seed, 2)
    if model.kind == "spectral_bounded":
        if model.eta == 0.0:
            return {"E": np.zeros((d,) * 4)}
        e = symmetrized_gaussian(d, rng)
        return {"E": e * (model.eta / square_spectral_norm(e))}
    raise ValueError("dictionary_split noise needs the components; use dictionary_parts")


def dictionary_parts(components, model: NoiseModel, seed: int) -> dict[str, np.ndarray]:
    """``E1 = sum_i c_i a_i^{(x)4}`` with ``max |c_i| = eps1`` (so ``E1`` lies in the
    signal span and its whitened norm is ``eps1`` for independent ``a_i^{(x)2}``) and a
    symmetrized Gaussian ``E2`` with ``||E2|| = eps2 * lambda_n(Q)``.
    """
    a = np.atleast_2d(np.asarray(components, dtype=float))
    n, d = a.shape
    rng = _stream(seed, 3)
    c = rng.uniform(-1.0, 1.0, size=n)
    c *= model.eps1 / np.max(np.abs(c))
    e1 = np.einsum("n,ni,nj,nk,nl->ijkl", c, a, a, a, a)
    q = build_tensor(a).entries.reshape(d * d, d * d)
    lam = np.linalg.eigvalsh(q)[::-1]
    e2 = np.zeros((d,) * 4)
    if model.eps2 > 0.0:
        g = symmetrized_gaussian(d, rng)
        e2 = g * (model.eps2 * lam[n - 1] / square_spectral_norm(g))
    return {"E1": e1, "E2": e2}


def add_noise(t: SymTensor4, model: NoiseModel, seed: int, components=None) -> SymTensor4:
    """``t`` plus noise drawn from ``model``; ``dictionary_split`` needs ``components``."""
    if model.kind == "dictionary_split":
        if components is None:
            raise ValueError("dictionary_split noise needs the components")
        parts = dictionary_parts(components, model, seed)
    else:
        parts = noise_parts(t, model, seed)
    total = sum(parts.values())
    return SymTensor4(t.d, t.entries + np.asarray(total).reshape(-1))


# Dictionary-learning perturbation oracle --------------------------------------------


def _psd_power(m: np.ndarray, power: float, rank: int) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    idx = np.argsort(w)[::-1][:rank]
    return (v[:, idx] * w[idx] ** power) @ v[:, idx].T


def _range_projector(m: np.ndarray, rank: int) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    top = v[:, np.argsort(w)[::-1][:rank]]
    return top @ top.T


@dataclass(frozen=True)
class PerturbReport:
    proj_distance: float
    proj_bound: float
    sqrt_slack: float
    inv_sqrt_slack: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.proj_distance <= self.proj_bound and self.sqrt_slack >= 0.0 and self.inv_sqrt_slack >= 0.0


def build_split_pair(q: np.ndarray, eps1: float, eps2: float, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(Qt, E1, E2)`` with ``Qt`` PSD of the same rank as ``q``.

    ``E1 = Q^{1/2} F Q^{1/2}`` with ``F`` symmetric on the range, ``||F|| = eps1``.
    ``E2 = O M O^T - M`` for ``M = Q + E1`` and a rotation ``O = exp(t K)``, with
    ``t`` solved so that ``||Q^+|| ||E2|| = eps2``.
    """
    q = 0.5 * (q + q.T)
    dim = q.shape[0]
    w = np.linalg.eigvalsh(q)
    rank = int(np.sum(w > 1e-10 * w.max()))
    rng = _stream(seed, 4)
    basis = np.linalg.eigh(q)[1][:, ::-1][:, :rank]
    f = rng.standard_normal((rank, rank))
    f = f + f.T
    f *= eps1 / np.linalg.norm(f, 2) if eps1 > 0 else 0.0
    half = _psd_power(q, 0.5, rank)
    e1 = half @ basis @ f @ basis.T @ half
    m = q + e1
    k = rng.standard_normal((dim, dim))
    k = k - k.T
    k /= np.linalg.norm(k, 2)
    lam_n = np.sort(w)[::-1][rank - 1]
    target = eps2 * lam_n

    def e2_at(s: float) -> np.ndarray:
        o = scipy.linalg.expm(s * k)
        return o @ m @ o.T - m

    if target == 0.0:
        e2 = np.zeros_like(q)
    else:
        hi = 1e-3
        while np.linalg.norm(e2_at(hi), 2) < target:
            hi *= 2.0
            if hi > math.pi:
                raise HypothesisViolated("cannot reach the requested E2 norm by rotation")
        s = scipy.optimize.brentq(lambda x: np.linalg.norm(e2_at(x), 2) - target, 0.0, hi, xtol=1e-15, rtol=1e-15)
        e2 = e2_at(s)
    return m + e2, e1, e2


def check_dictionary_perturb(
    q: np.ndarray,
    qt: np.ndarray,
    eps: float,
    probe_vectors: np.ndarray,
    *,
    e1: np.ndarray | None = None,
    rank: int | None = None,
    tol: float = 1e-8,
) -> PerturbReport:
    """Evaluate the three perturbation bounds for PSD rank-n ``q`` and ``qt``.

    When ``e1`` is supplied, ``E2 = qt - q - e1`` and the split hypotheses are
    verified to ``tol``; failing hypotheses raise ``HypothesisViolated``.
    """
    if not 0.0 <= eps <= EPS_MAX:
        raise HypothesisViolated(f"eps={eps} outside [0, {EPS_MAX}]")
    q = np.asarray(q, dtype=float)
    qt = np.asarray(qt, dtype=float)
    if q.shape != qt.shape or q.shape[0] != q.shape[1]:
        raise DimensionMismatch("q and qt must be square of equal size")
    wq = np.linalg.eigvalsh(0.5 * (q + q.T))
    wt = np.linalg.eigvalsh(0.5 * (qt + qt.T))
    scale = max(wq.max(), wt.max())
    if rank is None:
        rank = int(np.sum(wq > 1e-10 * scale))
    if wq.min() < -tol * scale or wt.min() < -tol * scale:
        raise HypothesisViolated("q and qt must be PSD")
    if int(np.sum(wt > 1e-10 * scale)) != rank:
        raise HypothesisViolated("q and qt must have the same rank")
    p = _range_projector(q, rank)
    if e1 is not None:
        inv_half = _psd_power(q, -0.5, rank)
        e2 = qt - q - e1
        lam_n = np.sort(wq)[::-1][rank - 1]
        n1 = np.linalg.norm(inv_half @ e1 @ inv_half, 2)
        n2 = np.linalg.norm(e2, 2) / lam_n
        if np.linalg.norm(p @ e1 @ p - e1) > tol * max(1.0, np.linalg.norm(e1)):
            raise HypothesisViolated("E1 is not supported on the range of Q")
        if n1 > eps * (1 + tol) or n2 > eps * (1 + tol):
            raise HypothesisViolated(f"split norms {n1:.3e}, {n2:.3e} exceed eps={eps}")
    pt = _range_projector(qt, rank)
    proj = float(np.linalg.norm(p - pt, 2))
    x = np.atleast_2d(np.asarray(probe_vectors, dtype=float))
    if x.shape[0] != q.shape[0]:
        x = x.T
    qh, qth = _psd_power(q, 0.5, rank), _psd_power(qt, 0.5, rank)
    qih, qtih = _psd_power(q, -0.5, rank), _psd_power(qt, -0.5, rank)
    perp = np.linalg.norm(x - p @ x, axis=0)
    lhs1 = np.linalg.norm((qh - qth) @ x, axis=0)
    rhs1 = 4 * eps * np.linalg.norm(qh @ x, axis=0) + math.sqrt(eps) * perp
    lhs2 = np.linalg.norm((qih - qtih) @ x, axis=0)
    rhs2 = 4 * eps * np.linalg.norm(qih @ x, axis=0) + 2 * math.sqrt(eps) * perp
    return PerturbReport(
        proj,
        3.0 * eps,
        float(np.min(rhs1 - lhs1)),
        float(np.min(rhs2 - lhs2)),
        {"sqrt_lhs_max": float(lhs1.max()), "inv_sqrt_lhs_max": float(lhs2.max())},
    )


# Swap matrix and related simulations ------------------------------------------------


def swap_block_constant(d: int) -> float:
    """``2 (d1^2 - 2 d1 d2 + d2^2 (d-1))``, the diagonal value of each ``R_i^T R_i``."""
    d1, d2 = fourth_moment_constants(d)
    return 2.0 * (d1 * d1 - 2.0 * d1 * d2 + d2 * d2 * (d - 1))


def build_swap_matrix(components, seed: int) -> np.ndarray:
    """``R`` (d^3 x n(d-1)) with blocks ``S_i - P23 S_i``, ``S_i = A^{-1/2}(a_i (x) a_i (x) B_i)``.

    ``B_i`` is a random orthonormal complement basis of ``a_i`` drawn from stream
    ``(seed, i)``; ``A^{-1/2}`` acts on the first two modes by the closed form.
    """
    a = np.atleast_2d(np.asarray(components, dtype=float))
    n, d = a.shape
    if d < 2:
        raise ValueError("d must be >= 2")
    blocks = []
    for i, ai in enumerate(a):
        b = complement_basis(ai, _stream(seed, 5, i))
        head = fourth_moment_inv_sqrt_apply(np.outer(ai, ai).reshape(d * d), d)
        s = np.einsum("p,qj->pqj", head, b).reshape(d**3, d - 1)
        blocks.append(s - apply_p23(s, d))
    return np.hstack(blocks)


def swap_concentration(components, seed: int) -> tuple[float, float]:
    """``(d', ||R^T R / d' - Id||)`` with ``d'`` the diagonal constant."""
    r = build_swap_matrix(components, seed)
    d = np.atleast_2d(components).shape[1]
    dp = swap_block_constant(d)
    g = r.T @ r / dp
    return dp, float(np.linalg.norm(g - np.eye(g.shape[0]), 2))


def u_projector_deviation(components) -> float:
    """``||U - Pi_img(U)||`` for ``U = sum (a_i^{(x)3})(a_i^{(x)3})^T`` via the Gram matrix."""
    a = np.atleast_2d(np.asarray(components, dtype=float))
    w = np.linalg.eigvalsh((a @ a.T) ** 3)
    nz = w[w > 1e-10 * w.max()]
    return float(np.max(np.abs(nz - 1.0)))


# CSV I/O -----------------------------------------------------------------------------


def write_components_csv(path: str | Path, components) -> None:
    a = np.atleast_2d(np.asarray(components, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in a:
            writer.writerow([repr(float(x)) for x in row])


def read_components_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows)
