"""Quick invariant and oracle checks across all modules, runnable from the CLI."""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import oracles
from .decompose import DecomposeParams, decompose, signed_hausdorff
from .implicit_tensor import contract, densify, from_factors, frobenius_norm, mode_multiply, spectral_truncate
from .instances import (
    build_split_pair,
    build_swap_matrix,
    build_tensor,
    check_dictionary_perturb,
    gen_components,
    swap_block_constant,
)
from .io import read_tnsr, write_tnsr
from .lift import SymTensor4, kappa, lift
from .linalg import (
    LinearOperator,
    RectOperator,
    gapped_eigendecomposition,
    pseudo_inverse_sqrt,
    subspace_sine_distance,
    top_singular_pair,
)
from .rounding import membership_ratio
from .symmetry import apply_p23, apply_pi_sym, fourth_moment_inv_sqrt_apply

Check = Callable[[], tuple[bool, str]]


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_pi_sym() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    dense = oracles.dense_pi_sym(3)
    err = max(_rel(apply_pi_sym(v, 3), dense @ v) for v in rng.standard_normal((20, 27)))
    return err < 1e-12, f"max rel err {err:.1e}"


def check_p23() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    v = rng.standard_normal(64)
    err = _rel(apply_p23(v, 4), oracles.dense_p23(4) @ v)
    return err < 1e-14, f"rel err {err:.1e}"


def check_fourth_moment() -> tuple[bool, str]:
    d = 4
    x = np.random.default_rng(2).standard_normal(d * d)
    ref = oracles.psd_power(oracles.unit_fourth_moment(d), -0.5) @ x
    err = _rel(fourth_moment_inv_sqrt_apply(x, d), ref)
    return err < 1e-10, f"rel err {err:.1e}"


def check_implicit_ops() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    worst = 0.0
    for d, n in ((2, 2), (3, 2)):
        d2 = d * d
        u, v = rng.standard_normal((2, d**3, n))
        t = from_factors(u, v, d)
        dense = oracles.implicit_dense(u, v, d)
        x, y = rng.standard_normal((2, d2))
        for modes in ((1, 2), (1, 3), (2, 3)):
            worst = max(worst, _rel(contract(t, x, y, modes), oracles.dense_contract(dense, x, y, modes)))
        r = rng.standard_normal((d2, d2))
        worst = max(worst, _rel(densify(mode_multiply(t, r, 2)), oracles.dense_mode_multiply(dense, r, 2)))
        worst = max(worst, abs(frobenius_norm(t) - np.linalg.norm(dense)) / np.linalg.norm(dense))
        tr = densify(spectral_truncate(t, "12|3", k=2 * n))
        worst = max(worst, _rel(tr, oracles.dense_truncate(dense, 3, k=2 * n)))
    return worst < 1e-8, f"max rel err {worst:.1e}"


def check_eigensolver() -> tuple[bool, str]:
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
    lam = np.concatenate([np.linspace(10, 6, 5), np.linspace(3, 0.1, 15)])
    m = (q * lam) @ q.T
    eig = gapped_eigendecomposition(LinearOperator.from_matrix(m), 5, 1e-12)
    sine = subspace_sine_distance(eig.projector(), oracles.top_projector(m, 5))
    val = float(np.max(np.abs(eig.eigvals - lam[:5])))
    w = pseudo_inverse_sqrt(eig, -0.5).dense()
    proj_err = float(np.linalg.norm(w @ w @ (q[:, :5] * lam[:5]) @ q[:, :5].T - eig.projector(), 2))
    ok = sine < 1e-6 and val < 1e-8 and proj_err < 1e-8
    return ok, f"sine {sine:.1e}, eig {val:.1e}, proj {proj_err:.1e}"


def check_top_singular() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    u, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    v, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    s = np.concatenate([[3.0], np.linspace(2.0, 0.1, 29)])
    m = (u * s) @ v.T
    pair = top_singular_pair(RectOperator.from_matrix(m), gap_hint=0.5)
    err = abs(pair.sigma - 3.0) + (1 - abs(pair.u @ u[:, 0])) + (1 - abs(pair.v @ v[:, 0]))
    return pair.converged and err < 1e-8, f"err {err:.1e}"


def check_eigen_perturb() -> tuple[bool, str]:
    rng = np.random.default_rng(6)
    worst = -np.inf
    for _ in range(20):
        dim, n = 12, 4
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        lam = np.sort(rng.uniform(0, 1, dim))[::-1]
        lam[:n] += 1.0
        m = (q * lam) @ q.T
        gap = lam[n - 1] - lam[n]
        e = rng.standard_normal((dim, dim))
        e = e + e.T
        eps = rng.uniform(0.01, 0.24) * gap
        e *= eps / np.linalg.norm(e, 2)
        dist = np.linalg.norm(oracles.top_projector(m, n) - oracles.top_projector(m + e, n), 2)
        worst = max(worst, dist - 2 * eps / (gap - 2 * eps))
    return worst <= 0.0, f"max excess {worst:.2e}"


def check_lift() -> tuple[bool, str]:
    a = gen_components("spherical", 4, 5, 7)
    t = build_tensor(a)
    out = lift(t, 5)
    ref = oracles.dense_lift(t.array, 5)
    err_t = float(np.linalg.norm(densify(out.whitened()) - oracles.whitened_target(a)))
    err_p = float(np.linalg.norm(out.pi3_basis @ out.pi3_basis.T - ref["pi3"], 2))
    return err_t < 1e-6 and err_p < 1e-6, f"tensor {err_t:.1e}, pi3 {err_p:.1e}"


def check_kappa() -> tuple[bool, str]:
    a = gen_components("spherical", 4, 6, 8)
    k = kappa(a)
    ref = oracles.kappa_dense(a)
    gap = oracles.identifiability_gap(a)
    ok = abs(k - ref) < 1e-8 and gap <= 1 - k * k + 1e-10 and abs(kappa(np.eye(2)[:1]) - 1 / math.sqrt(2)) < 1e-12
    return ok, f"kappa {k:.4f} vs {ref:.4f}, gap {gap:.4f}"


def check_membership() -> tuple[bool, str]:
    a = gen_components("spherical", 6, 9, 9)
    out = lift(build_tensor(a), 9)
    w = out.whitener_matrix()
    rng = np.random.default_rng(10)
    theta = 0.1
    accepted = all(membership_ratio(ai, out.pi3_basis, w) >= 1 - theta for ai in a)
    worst = 0.0
    for _ in range(100):
        i = rng.integers(9)
        u = oracles.planted_vector(a[i], rng.uniform(0, 1 - theta), rng)
        if np.max((a @ u) ** 2) <= 1 - theta:
            worst = max(worst, membership_ratio(u, out.pi3_basis, w))
    return accepted and worst < 1 - theta, f"worst rejected ratio {worst:.4f}"


def check_decompose() -> tuple[bool, str]:
    a = np.eye(4)
    rep = decompose(build_tensor(a), DecomposeParams(n=4, seed=0, repetitions=60, threads=1), truth=a)
    ok = rep.covered_fraction == 1.0 and rep.signed_hausdorff is not None and rep.signed_hausdorff < 1e-4
    return ok, f"covered {rep.covered_fraction}, hausdorff {rep.signed_hausdorff}"


def check_hausdorff() -> tuple[bool, str]:
    e = np.eye(2)
    vals = (signed_hausdorff(e[:1], e[:1]), signed_hausdorff(e[:1], -e[:1]), signed_hausdorff(e[:1], e[1:]))
    ok = vals[0] == 0 and vals[1] == 0 and abs(vals[2] - math.sqrt(2)) < 1e-15
    return ok, f"{vals}"


def check_dictionary() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    q = oracles.random_psd(8, 3, rng)
    qt, e1, _ = build_split_pair(q, 0.05, 0.05, 0)
    rep = check_dictionary_perturb(q, qt, 0.05, rng.standard_normal((8, 50)), e1=e1)
    return rep.passed, f"proj {rep.proj_distance:.3e} <= {rep.proj_bound:.3e}"


def check_swap() -> tuple[bool, str]:
    a = gen_components("spherical", 6, 8, 12)
    r = build_swap_matrix(a, 0)
    c = swap_block_constant(6)
    err = max(float(np.abs(r[:, 5 * i : 5 * i + 5].T @ r[:, 5 * i : 5 * i + 5] - c * np.eye(5)).max()) for i in range(8))
    return err < 1e-8, f"block err {err:.1e}"


def check_tnsr() -> tuple[bool, str]:
    arr = np.random.default_rng(13).standard_normal((3, 3, 3, 3))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.tnsr"
        write_tnsr(path, arr)
        back = read_tnsr(path)
    return bool(np.array_equal(arr, back)), "bit-exact" if np.array_equal(arr, back) else "mismatch"


CHECKS: dict[str, Check] = {
    "pi_sym_oracle": check_pi_sym,
    "p23_oracle": check_p23,
    "fourth_moment_inv_sqrt": check_fourth_moment,
    "implicit_tensor_oracle": check_implicit_ops,
    "gapped_eigendecomposition": check_eigensolver,
    "top_singular_pair": check_top_singular,
    "eigen_perturbation_bound": check_eigen_perturb,
    "lift_noiseless": check_lift,
    "kappa_and_identifiability": check_kappa,
    "membership_test": check_membership,
    "decompose_orthonormal": check_decompose,
    "signed_hausdorff": check_hausdorff,
    "dictionary_perturbation": check_dictionary,
    "swap_matrix_blocks": check_swap,
    "tnsr_round_trip": check_tnsr,
}


def run_all(echo: Callable[[str], None] = print) -> list[tuple[str, bool, str, float]]:
    """Run every check and print a table; exceptions count as failures."""
    results = []
    for name, fn in CHECKS.items():
        clock = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - clock
        results.append((name, bool(ok), detail, elapsed))
        echo(f"{'PASS' if ok else 'FAIL'}  {name:<28} {elapsed:6.2f}s  {detail}")
    return results
