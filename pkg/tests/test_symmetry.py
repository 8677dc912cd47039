from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ovtensor import oracles
from ovtensor.symmetry import (
    apply_p23,
    apply_pi23,
    apply_pi23_perp,
    apply_pi_sym,
    flat_index,
    fourth_moment_constants,
    fourth_moment_inv_sqrt_apply,
    inject_fault,
    phi,
    pi_sym_coefficient,
)


def _cube(x, y, z):
    return np.einsum("i,j,k->ijk", x, y, z).reshape(-1)


def test_pi_sym_coefficients():
    assert pi_sym_coefficient((1, 1, 1), (1, 1, 1)) == 1.0
    # (1,2,1) has an orbit of three index triples; the projector weight is 1/3.
    assert pi_sym_coefficient((1, 2, 1), (1, 1, 2)) == pytest.approx(1 / 3)
    assert pi_sym_coefficient((1, 2, 3), (3, 2, 1)) == pytest.approx(1 / 6)
    assert pi_sym_coefficient((1, 1, 2), (1, 1, 3)) == 0.0


def test_pi_sym_is_orbit_mean():
    d = 3
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d**3)
    out = apply_pi_sym(v, d).reshape(d, d, d)
    t = v.reshape(d, d, d)
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    assert_allclose(out, sum(t.transpose(p) for p in perms) / 6, atol=1e-14)


def test_pi_sym_fixed_point_and_idempotent():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(4)
    assert_allclose(apply_pi_sym(_cube(x, x, x), 4), _cube(x, x, x), atol=1e-13)
    v = rng.standard_normal(64)
    once = apply_pi_sym(v, 4)
    assert_allclose(apply_pi_sym(once, 4), once, atol=1e-13)


def test_pi_sym_dense_oracle():
    rng = np.random.default_rng(2)
    dense = oracles.dense_pi_sym(3)
    assert_allclose(dense @ dense, dense, atol=1e-13)
    for v in rng.standard_normal((10, 27)):
        assert_allclose(apply_pi_sym(v, 3), dense @ v, atol=1e-12)
    block = rng.standard_normal((27, 4))
    assert_allclose(apply_pi_sym(block, 3), dense @ block, atol=1e-12)


def test_inject_fault_breaks_pi_sym():
    v = np.random.default_rng(3).standard_normal(27)
    clean = apply_pi_sym(v, 3)
    with inject_fault("pi_sym"):
        broken = apply_pi_sym(v, 3)
    assert np.linalg.norm(broken - clean) > 1e-3
    assert_allclose(apply_pi_sym(v, 3), clean)


def test_p23_examples():
    e = np.eye(3)
    assert_allclose(apply_p23(_cube(e[0], e[1], e[2]), 3), _cube(e[0], e[2], e[1]))
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((2, 3))
    assert_allclose(apply_p23(_cube(x, y, y), 3), _cube(x, y, y))
    v = rng.standard_normal(27)
    assert np.linalg.norm(apply_p23(v, 3)) == pytest.approx(np.linalg.norm(v))
    assert_allclose(apply_p23(apply_p23(v, 3), 3), v)
    assert_allclose(apply_p23(v, 3), oracles.dense_p23(3) @ v)


def test_pi23_perp_examples():
    e = np.eye(2)
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((2, 2))
    assert_allclose(apply_pi23_perp(_cube(x, y, y), 2), 0.0, atol=1e-15)
    out = apply_pi23_perp(_cube(e[0], e[0], e[1]), 2)
    assert_allclose(out, 0.5 * (_cube(e[0], e[0], e[1]) - _cube(e[0], e[1], e[0])))
    assert np.linalg.norm(out) == pytest.approx(1 / math.sqrt(2))
    v = rng.standard_normal(8)
    perp, par = apply_pi23_perp(v, 2), apply_pi23(v, 2)
    assert_allclose(perp + par, v, atol=1e-12)
    assert abs(perp @ par) < 1e-12
    assert_allclose(apply_pi23_perp(perp, 2), perp, atol=1e-14)


def test_fourth_moment_constants_d2():
    d1, d2 = fourth_moment_constants(2)
    assert d1 == pytest.approx(2.0)
    assert d2 == pytest.approx(1 - 1 / math.sqrt(2))


def test_fourth_moment_on_square():
    rng = np.random.default_rng(6)
    d = 5
    a = rng.standard_normal(d)
    a /= np.linalg.norm(a)
    d1, d2 = fourth_moment_constants(d)
    assert_allclose(fourth_moment_inv_sqrt_apply(np.kron(a, a), d), d1 * np.kron(a, a) - d2 * phi(d), atol=1e-13)


def test_fourth_moment_dense_oracle():
    d = 3
    rng = np.random.default_rng(7)
    ref = oracles.psd_power(oracles.unit_fourth_moment(d), -0.5)
    for x in rng.standard_normal((5, d * d)):
        assert_allclose(fourth_moment_inv_sqrt_apply(x, d), ref @ x, atol=1e-12)


def test_flat_index_convention():
    assert flat_index((1, 2, 0), 3) == 1 * 9 + 2 * 3 + 0
