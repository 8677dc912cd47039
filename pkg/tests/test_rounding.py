from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ovtensor import oracles
from ovtensor.errors import NoConvergence, ZeroVector
from ovtensor.implicit_tensor import densify, from_factors
from ovtensor.instances import build_tensor, gen_components
from ovtensor.lift import lift
from ovtensor.rounding import (
    RoundParams,
    RoundStats,
    default_repetitions,
    default_theta,
    extract,
    membership_ratio,
    preprocess_truncate,
    round_all,
    round_candidate,
    test_membership,
)


def implicit_from_dense(t: np.ndarray, d: int):
    """Exact factored form of a dense (d^2, d^2, d^2) tensor."""
    m = np.zeros((d**3, d**3))
    for i, ip, j, jp, k, kp in np.ndindex(*(d,) * 6):
        m[(i * d + ip) * d + j, (k * d + kp) * d + jp] = t[i * d + ip, j * d + jp, k * d + kp]
    u, s, vt = np.linalg.svd(m)
    keep = s > 1e-12 * max(s[0], 1e-300)
    keep[0] = True
    return from_factors(u[:, keep] * s[keep], vt[keep].T, d)


def _orthogonal_cubes(d, n, seed):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d * d, n)))
    return q.T, np.einsum("na,nb,nc->abc", q.T, q.T, q.T)


def test_defaults():
    assert default_repetitions(10, 0.1) == math.ceil(10 * 10 * math.log(11) * 10**0.1)
    assert default_theta(1.0, 0.0, 0.1, 0.1) == pytest.approx(1e-3)
    assert default_theta(100.0, 0.01, 0.1, 0.1) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        RoundParams(beta=0.0)


def test_preprocess_orthonormal_unchanged():
    b, dense = _orthogonal_cubes(2, 3, 0)
    t = implicit_from_dense(dense, 2)
    assert_allclose(densify(preprocess_truncate(t)), dense, atol=1e-8)


def test_preprocess_spiked_error():
    rng = np.random.default_rng(1)
    b, dense = _orthogonal_cubes(2, 2, 1)
    x, y = rng.standard_normal((2, 4))
    spike = np.einsum("a,b,c->abc", x, y, x)
    spike *= 5.0 / oracles.reshaping_singular_values(spike, 3)[0]
    t = implicit_from_dense(dense + spike, 2)
    out = densify(preprocess_truncate(t))
    for singleton in (1, 3):
        assert oracles.reshaping_singular_values(out, singleton)[0] <= 1 + 1e-6


def test_preprocess_bound_per_stage():
    rng = np.random.default_rng(2)
    a = gen_components("spherical", 4, 4, 2)
    out = lift(build_tensor(a), 4)
    clean = densify(out.whitened())
    noisy = clean + 0.05 * rng.standard_normal(clean.shape)
    t = implicit_from_dense(noisy, 4)
    k = 2 * t.n
    first = oracles.dense_truncate(noisy, 3, k=k)
    second = oracles.dense_truncate(first, 1, k=k)
    got = densify(preprocess_truncate(t, delta=0.1))
    assert_allclose(got, second, atol=1e-8 * np.linalg.norm(second))
    for stage_in, singleton in ((noisy, 3), (first, 1)):
        rho = oracles.reshaping_singular_values(stage_in, singleton)
        ref_full = oracles.dense_truncate(stage_in, singleton)
        ref_k = oracles.dense_truncate(stage_in, singleton, k=k)
        bound = 1.1 * (rho[k - 1] if rho.size >= k else 0.0) * np.linalg.norm(stage_in)
        assert np.linalg.norm(ref_k - ref_full) <= bound + 1e-12


def test_round_candidate_diagonal():
    d = 2
    e = np.eye(d * d)
    t = implicit_from_dense(np.einsum("na,nb,nc->abc", e, e, e), d)
    for seed in range(10):
        g = np.random.default_rng(seed).standard_normal(d * d)
        left, right = round_candidate(t, 0.1, np.random.default_rng(seed))
        target = np.argmax(np.abs(g))
        assert abs(left.vector[target]) == pytest.approx(1.0, abs=1e-8)
        assert abs(right.vector[target]) == pytest.approx(1.0, abs=1e-8)


def test_round_candidate_zero():
    t = from_factors(np.zeros((8, 1)), np.zeros((8, 1)), 2)
    with pytest.raises(NoConvergence):
        round_candidate(t, 0.1, 0)


def test_round_candidate_orthonormal_cubes():
    b, dense = _orthogonal_cubes(3, 3, 3)
    t = implicit_from_dense(dense, 3)
    for seed in range(100):
        for cand in round_candidate(t, 0.1, seed):
            assert np.max((b @ cand.vector) ** 2) >= 1 - 1e-6


@pytest.fixture(scope="module")
def lifted_d5():
    a = gen_components("spherical", 5, 5, 4)
    return a, lift(build_tensor(a), 5)


def test_extract_exact(lifted_d5):
    a, out = lifted_d5
    w = out.whitener_matrix().dense()
    for ai in a:
        bi = w @ np.kron(ai, ai)
        got = extract(bi / np.linalg.norm(bi), out.pi3_basis)
        assert abs(got @ ai) == pytest.approx(1.0, abs=1e-8)


def test_extract_orthogonal_is_zero(lifted_d5):
    a, out = lifted_d5
    w = out.whitener_matrix().dense()
    bs = np.array([w @ np.kron(x, x) for x in a]).T
    u = np.random.default_rng(5).standard_normal(25)
    u -= bs @ np.linalg.lstsq(bs, u, rcond=None)[0]
    u /= np.linalg.norm(u)
    with pytest.raises(ZeroVector):
        extract(u, out.pi3_basis)


def test_extract_perturbed(lifted_d5):
    a, out = lifted_d5
    w = out.whitener_matrix().dense()
    rng = np.random.default_rng(6)
    for ai in a:
        bi = w @ np.kron(ai, ai)
        u = oracles.planted_vector(bi / np.linalg.norm(bi), 0.95, rng)
        assert abs(extract(u, out.pi3_basis) @ ai) >= 1 - 4 * 0.05**0.25


@pytest.fixture(scope="module")
def lifted_d6():
    a = gen_components("spherical", 6, 4, 7)
    return a, lift(build_tensor(a), 4)


def test_membership_examples(lifted_d6):
    a, out = lifted_d6
    w = out.whitener_matrix()
    for ai in a:
        assert test_membership(ai, 0.05, out.pi3_basis, w)
    q, _ = np.linalg.qr(np.column_stack([a.T, np.random.default_rng(8).standard_normal((6, 1))]))
    assert not test_membership(q[:, -1], 0.05, out.pi3_basis, w)


def test_membership_planted_rejected(lifted_d6):
    a, out = lifted_d6
    w = out.whitener_matrix()
    theta = 0.2
    rng = np.random.default_rng(9)
    p3 = oracles.true_pi3(a)
    wd = w.dense()
    for _ in range(50):
        u = oracles.planted_vector(a[0], 1 - theta - 0.05, rng)
        if np.max((a @ u) ** 2) > 1 - theta - 0.05 + 1e-12:
            continue
        rho = np.kron(wd @ np.kron(u, u), u)
        assert membership_ratio(u, out.pi3_basis, w) == pytest.approx(rho @ p3 @ rho / (rho @ rho), abs=1e-10)
        assert not test_membership(u, theta, out.pi3_basis, w)


def test_round_all_orthonormal():
    out = lift(build_tensor(np.eye(4)), 4)
    rec = round_all(out.whitened(), out.pi3_basis, out.whitener_matrix(), RoundParams(repetitions=200, threads=1))
    corr = np.abs(np.array(rec) @ np.eye(4))
    assert np.all(corr.max(axis=0) >= 0.999)


def test_round_all_zero_repetitions():
    out = lift(build_tensor(np.eye(3)), 3)
    assert round_all(out.whitened(), out.pi3_basis, out.whitener, RoundParams(repetitions=0)) == []


def test_round_all_random_d6():
    a = gen_components("spherical", 6, 9, 10)
    out = lift(build_tensor(a), 9)
    reps = math.ceil(10 * 9 * math.log(9))
    stats = RoundStats()
    rec = round_all(out.whitened(), out.pi3_basis, out.whitener, RoundParams(repetitions=reps, threads=1), stats=stats)
    corr = np.abs(np.array(rec) @ a.T)
    assert np.mean(corr.max(axis=0) >= 0.99) >= 0.99
    assert np.all(corr.max(axis=1) >= 0.99)
    assert stats.repetitions == reps and stats.accepted == len(rec)


def test_round_all_thread_independent():
    a = gen_components("spherical", 5, 8, 11)
    out = lift(build_tensor(a), 8)
    args = (out.whitened(), out.pi3_basis, out.whitener)
    one = round_all(*args, RoundParams(repetitions=100, seed=3, threads=1))
    many = round_all(*args, RoundParams(repetitions=100, seed=3, threads=4))
    assert len(one) == len(many)
    assert all(np.array_equal(x, y) for x, y in zip(one, many))
