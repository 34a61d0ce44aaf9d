import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hblock.apps import (
    collocation_alpha, collocation_entry, collocation_system, compare_log_power, complexity_table,
    condition_study, construction_tally, direct_potential, encode_collocation, filtered_inversion_units,
    near_entry, qfmm_potential, query_complexity, singular_spectrum, solve_reference,
)
from hblock.blockenc import verify
from hblock.kernels import Family, Kernel, PointSet, kernel_for_gaussian
from hblock.linalg import operator_norm

import oracles


# fast multipole --------------------------------------------------------------

def test_two_points():
    res = qfmm_potential(PointSet(np.array([0.0, 1.0]), np.ones(2)))
    np.testing.assert_allclose(res.potential, [1.0, 1.0])
    np.testing.assert_allclose(res.state, [1 / math.sqrt(2)] * 2)


def test_random_masses_match_direct_sum():
    rng = np.random.default_rng(5)
    m = rng.uniform(0.5, 1.5, 64)
    pts = PointSet.grid(64).with_masses(m)
    res = qfmm_potential(pts)
    ref = oracles.direct_potential(np.arange(64.0), m)
    assert np.linalg.norm(res.potential - ref) / np.linalg.norm(ref) <= 1e-10
    assert res.queries["O_k"] == 2


def test_off_grid_points_use_mesh():
    x = np.array([0.0, 0.5, 2.0, 3.5, 4.0])
    m = np.array([1.0, 2.0, 0.5, 1.0, 1.5])
    res = qfmm_potential(PointSet(x, m))
    ref = oracles.direct_potential(x, m)
    np.testing.assert_allclose(res.potential, ref, rtol=1e-10)
    assert res.mesh_sites is not None


def test_direct_potential_matches_loop_oracle():
    x = np.array([0.0, 1.0, 3.0, 7.0])
    m = np.array([1.0, -2.0, 0.5, 1.0])
    np.testing.assert_allclose(direct_potential(PointSet(x, m), 2.0), oracles.direct_potential(x, m, 2.0))


def test_success_probability_is_flat():
    probs = [qfmm_potential(PointSet.grid(N).with_masses(np.ones(N))).success_prob for N in (64, 256)]
    assert max(probs) / min(probs) < 2


def test_zero_mass_rejected():
    with pytest.raises(ValueError, match="zero"):
        qfmm_potential(PointSet.grid(8).with_masses(np.zeros(8)))


# collocation -----------------------------------------------------------------

def test_far_entry_value():
    assert collocation_entry(4, 8, 1, 1 / 8) == 1 / 1024
    assert collocation_entry(4, 8, 1, 1 / 8) == oracles.collocation_far(4, 8, 1, 1 / 8)


def test_assembled_far_entries():
    sysm = collocation_system(8, 1, 1 / 8)
    assert sysm.K[0, 4] == pytest.approx(1 / 1024, rel=1e-15)


@pytest.mark.parametrize("N", [16, 64, 256])
def test_near_entries_match_loop_oracle(N):
    for off in (0, 1):
        assert near_entry(off, N, 1, 1 / N) == pytest.approx(oracles.collocation_near(off, N, 1, 1 / N), rel=1e-13)


def test_diagonal_scales_as_lambda_squared():
    vals = [near_entry(0, N, 1, 1 / N) * N**2 for N in (64, 256, 1024)]
    assert vals[0] == pytest.approx(1.0671119789075987, rel=1e-12)
    assert max(vals) / min(vals) < 1.01


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_assembled_matches_formula_off_near_band(p):
    N = 64
    K = collocation_system(N, p).K
    for i in range(N):
        for j in range(N):
            off = min(abs(i - j), N - abs(i - j))
            if off > 1:
                ref = oracles.collocation_far(off, N, p, 1 / N)
                assert abs(K[i, j] - ref) <= 1e-3 * ref


@pytest.mark.parametrize("N", [32, 128])
def test_kappa_bound_holds(N):
    sysm = collocation_system(N)
    assert sysm.kappa_defined
    assert oracles.kappa(sysm.A) <= sysm.kappa_bound + 1e-10


def test_kappa_tends_to_one():
    ks = [oracles.kappa(collocation_system(32, 1, lam).A) for lam in (1 / 32, 1e-2, 1e-4)]
    assert ks[0] > ks[1] > ks[2] and ks[2] - 1 < 1e-6


def test_large_lambda_flags_bound():
    sysm = collocation_system(32, 1, 20.0)
    assert not sysm.kappa_defined and sysm.kappa_bound is None


def test_collocation_encoding():
    sysm = collocation_system(32)
    enc = encode_collocation(sysm, 1e-8)
    assert verify(enc, sysm.A) <= enc.eps
    assert enc.alpha == pytest.approx(1 + collocation_alpha(sysm), rel=1e-12)


def test_collocation_ratio_bounded():
    ratios = [collocation_alpha(s) / s.norm_K for s in (collocation_system(N) for N in (32, 64, 128, 256))]
    assert max(ratios) / min(ratios) < 1.2


def test_construction_tally_is_polylog():
    t = [construction_tally(2**L)["components"] for L in (5, 10, 20)]
    assert t == [7, 12, 22]


def test_collocation_errors():
    with pytest.raises(ValueError):
        collocation_system(16, 3.0)
    with pytest.raises(ValueError):
        collocation_system(12)


# reference solver ------------------------------------------------------------

def test_identity_solve():
    b = np.arange(5.0)
    np.testing.assert_array_equal(solve_reference(np.eye(5), b).x, b)


def test_hilbert_residual():
    H = 1.0 / (np.arange(8)[:, None] + np.arange(8)[None, :] + 1)
    assert solve_reference(H, np.ones(8)).residual <= 1e-8


def test_collocation_cross_check():
    sysm = collocation_system(64)
    g = np.cos(2 * np.pi * np.arange(64) / 64) + 2
    res = solve_reference(sysm.A, g)
    assert res.residual <= 1e-10
    np.testing.assert_allclose(res.x, np.linalg.solve(sysm.A, g), rtol=1e-10)


def test_singular_rejected():
    with pytest.raises(ValueError, match="singular"):
        solve_reference(np.ones((3, 3)), np.ones(3))


# query counts ----------------------------------------------------------------

def test_query_units():
    assert query_complexity(2.0, 2.0, 1, 0.5) == 1.0
    assert query_complexity(4.33, 1.0, 10, 1e-3, "inverse") == pytest.approx(299.1, abs=0.1)
    naive = query_complexity(1024, math.log(1024), 10, 1e-3, "inverse")
    assert 10000 < naive < 10300
    with pytest.raises(ValueError):
        query_complexity(1, 1, 0.5, 0.1)
    with pytest.raises(ValueError):
        query_complexity(1, 1, 1, 1.5)


def test_filtered_inversion_formula():
    assert filtered_inversion_units(math.e**-1, math.e**-2, 1.0) == pytest.approx(3 * math.e)


def test_complexity_table_exponents():
    rows, exps = complexity_table(Kernel.poly(2, C=1), [16, 32, 64, 128, 256])
    assert {r["method"] for r in rows} == {"hierarchical", "naive", "qram"}
    assert abs(exps["hierarchical"]) < 0.1
    assert exps["naive"] > 0.8
    assert 0.3 < exps["qram"] < 0.7


# condition and spectrum ------------------------------------------------------

NS = [16, 32, 64, 128, 256]


def test_zero_diagonal_grows_polynomially():
    st_ = condition_study({"p1": Kernel.poly(1)}, NS, 0.0)
    assert st_.slopes["p1"] > 0.5


def test_diagonal_two_grows_logarithmically():
    st_ = condition_study({"inv_r": Kernel.poly(1)}, NS + [512], 2.0)
    assert st_.aic["inv_r"]["aic_log"] < st_.aic["inv_r"]["aic_power"]


def test_gaussian_converges():
    st_ = condition_study({"g": kernel_for_gaussian()}, NS)
    assert abs(st_.slopes["g:tail"]) < 0.05


def test_log_model_recovers_log_data():
    Ns = np.array([16, 32, 64, 128, 256, 512], float)
    cmp = compare_log_power(Ns, 1 + 2 * np.log(Ns))
    assert cmp["aic_log"] < cmp["aic_power"]
    assert cmp["log_coef"] == pytest.approx([1, 2], rel=1e-8)


def test_constant_kernel_rank_one():
    s = singular_spectrum(Kernel.constant(1.0), 16)
    assert s.rank == 1 and s.overlap == pytest.approx(1.0)


def test_multiquadric_leading_vector_near_uniform():
    s = singular_spectrum(Kernel(Family.MULTIQUADRIC, c=0.25), 512, scale=1 / 512)
    assert s.overlap >= 0.9


@given(st.integers(2, 6))
def test_spectrum_sorted(L):
    s = singular_spectrum(Kernel.poly(1, C=1), 2**L)
    assert np.all(np.diff(s.sigma) <= 0) and s.sigma[0] == pytest.approx(operator_norm(
        np.array([[1.0 if i == j else 1 / abs(i - j) for j in range(2**L)] for i in range(2**L)])))
