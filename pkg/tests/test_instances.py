from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ovtensor import oracles
from ovtensor.errors import DegenerateSample, HypothesisViolated
from ovtensor.instances import (
    Ensemble,
    NoiseModel,
    add_noise,
    build_split_pair,
    build_swap_matrix,
    build_tensor,
    check_dictionary_perturb,
    dictionary_parts,
    gen_components,
    read_components_csv,
    square_spectral_norm,
    swap_block_constant,
    swap_concentration,
    u_projector_deviation,
    write_components_csv,
)
from ovtensor.symmetry import fourth_moment_constants


@pytest.mark.parametrize("kind", ["spherical", "sparse", "hypercube", "spiked"])
def test_components_unit_and_deterministic(kind):
    a = gen_components(kind, 8, 12, 3)
    assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(a, gen_components(kind, 8, 12, 3))
    assert not np.array_equal(a, gen_components(kind, 8, 12, 4))


def test_sparse_support():
    a = gen_components("sparse", 8, 50, 0)
    assert np.all(np.count_nonzero(a, axis=1) == 2)


def test_spiked_covariance():
    a = gen_components(Ensemble("spiked", spike_lambda=5.0, normalize=False), 10, 500, 1)
    ev = np.sort(np.linalg.eigvalsh(a.T @ a / 500))[::-1]
    assert ev[0] >= 2 * ev[1]


def test_degenerate_sample():
    # a 1-coordinate sparse vector in d=2 is never zero; a 0/1 cube in d=2 often is
    assert gen_components("hypercube", 2, 40, 0).shape == (40, 2)
    with pytest.raises(ValueError):
        gen_components("spherical", 1, 3, 0)
    with pytest.raises(DegenerateSample):
        import ovtensor.instances as inst

        orig = inst.RESAMPLE_CAP
        inst.RESAMPLE_CAP = 0
        try:
            gen_components("spherical", 3, 1, 0)
        finally:
            inst.RESAMPLE_CAP = orig


def test_build_tensor_examples():
    e = np.eye(2)
    t1 = build_tensor(e[:1]).array
    assert np.count_nonzero(t1) == 1 and t1[0, 0, 0, 0] == 1.0
    assert np.count_nonzero(build_tensor(e).array) == 2
    a = gen_components("spherical", 3, 3, 2)
    sq = np.array([np.kron(x, x) for x in a])
    ev = np.sort(np.linalg.eigvalsh(build_tensor(a).array.reshape(9, 9)))[::-1][:3]
    assert_allclose(ev, np.sort(np.linalg.eigvalsh(sq @ sq.T))[::-1], atol=1e-12)
    assert build_tensor(a).symmetry_deviation() < 1e-14


def test_add_noise_spectral():
    t = build_tensor(gen_components("spherical", 4, 5, 0))
    assert np.array_equal(add_noise(t, NoiseModel(eta=0.0), 0).entries, t.entries)
    noisy = add_noise(t, NoiseModel(eta=0.1), 0)
    assert square_spectral_norm(noisy.array - t.array) == pytest.approx(0.1, abs=1e-8)
    assert noisy.symmetry_deviation() < 1e-12


def test_add_noise_dictionary_split():
    a = gen_components("spherical", 4, 6, 1)
    parts = dictionary_parts(a, NoiseModel("dictionary_split", eps1=0.05, eps2=0.05), 1)
    q = build_tensor(a).array.reshape(16, 16)
    inv_half = oracles.psd_power(q, -0.5)
    e1 = parts["E1"].reshape(16, 16)
    e2 = parts["E2"].reshape(16, 16)
    assert np.linalg.norm(inv_half @ e1 @ inv_half, 2) == pytest.approx(0.05, abs=1e-8)
    lam_n = np.sort(np.linalg.eigvalsh(q))[::-1][5]
    assert np.linalg.norm(e2, 2) / lam_n == pytest.approx(0.05, abs=1e-8)
    p = oracles.span_projector(q)
    assert_allclose(p @ e1 @ p, e1, atol=1e-12)


def test_dictionary_perturb_identity():
    q = oracles.random_psd(8, 3, np.random.default_rng(2))
    rep = check_dictionary_perturb(q, q, 0.05, np.random.default_rng(3).standard_normal((8, 20)))
    assert rep.proj_distance < 1e-12
    assert rep.details["sqrt_lhs_max"] < 1e-10 and rep.details["inv_sqrt_lhs_max"] < 1e-10


def test_dictionary_perturb_split_bounds():
    rng = np.random.default_rng(4)
    q = oracles.random_psd(8, 3, rng)
    qt, e1, _ = build_split_pair(q, 0.05, 0.05, 4)
    rep = check_dictionary_perturb(q, qt, 0.05, rng.standard_normal((8, 100)), e1=e1)
    assert rep.passed


def test_dictionary_perturb_rejects_large_eps():
    q = oracles.random_psd(6, 2, np.random.default_rng(5))
    with pytest.raises(HypothesisViolated):
        check_dictionary_perturb(q, q, 0.11, np.ones((6, 1)))


def test_swap_single_block():
    r = build_swap_matrix(np.eye(2)[:1], 0)
    d1, d2 = fourth_moment_constants(2)
    assert r.shape == (8, 1)
    assert (r.T @ r)[0, 0] == pytest.approx(2 * (d1**2 - 2 * d1 * d2 + d2**2 * 1))
    assert swap_block_constant(2) == pytest.approx((r.T @ r)[0, 0])


def test_swap_diagonal_blocks():
    a = gen_components("spherical", 7, 10, 6)
    r = build_swap_matrix(a, 1)
    c = swap_block_constant(7)
    for i in range(10):
        blk = r[:, 6 * i : 6 * i + 6]
        assert_allclose(blk.T @ blk, c * np.eye(6), atol=1e-10 * c)


def test_swap_concentration_trend():
    small = swap_concentration(gen_components("spherical", 10, 40, 0), 0)[1]
    large = swap_concentration(gen_components("spherical", 10, 90, 0), 0)[1]
    assert small < large


def test_u_projector_deviation_matches_dense():
    a = gen_components("spherical", 4, 6, 7)
    cubes = np.array([np.kron(np.kron(x, x), x) for x in a]).T
    u = cubes @ cubes.T
    assert u_projector_deviation(a) == pytest.approx(np.linalg.norm(u - oracles.span_projector(cubes), 2), abs=1e-10)


@pytest.mark.xfail(strict=True, reason="measured deviation at d=10 is 1.5-3.4 for n=30-100, above 1")
def test_u_projector_deviation_at_most_one():
    for n in (30, 60, 100):
        assert u_projector_deviation(gen_components("spherical", 10, n, 0)) <= 1.0


def test_components_csv_round_trip(tmp_path):
    a = gen_components("spherical", 5, 3, 8)
    write_components_csv(tmp_path / "a.csv", a)
    assert np.array_equal(read_components_csv(tmp_path / "a.csv"), a)
