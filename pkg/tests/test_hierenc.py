import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hblock.blockenc import isometry_defect, verify
from hblock.hierenc import (
    encode_general_hmatrix, encode_generalized_magnitude, encode_hierarchical, encode_sparsified,
    level_sets, magnitude_level, norm_lower_bound, normalization_factor, optimality_report,
    plan_hierarchical, required_band, sparsify_band,
)
from hblock.hmatrix import compress
from hblock.hsplit import hierarchical_split
from hblock.kernels import ArrayOracle, EntryOracle, Kernel, PointSet
from hblock.linalg import operator_norm

import oracles


def plain(kernel, N):
    pts = PointSet.grid(N)
    return EntryOracle(kernel, pts), hierarchical_split(pts)


# closed forms ----------------------------------------------------------------

@pytest.mark.parametrize("L", range(2, 21))
def test_inverse_distance_alpha_is_three_log_n(L):
    assert normalization_factor(Kernel.poly(1), 2**L) == 3 * L


def test_closed_form_values():
    assert normalization_factor(Kernel.poly(2), 1024) == 8.98828125
    assert normalization_factor(Kernel.poly(0.5), 16) == pytest.approx(16.242640687119284, rel=1e-14)
    assert normalization_factor(Kernel.poly(2), 1024, dim=2) == 252.0
    assert normalization_factor(Kernel.expdecay(1.0), 256) == 14.90625


@given(st.sampled_from([0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]), st.integers(2, 14))
def test_closed_form_matches_oracle(p, L):
    assert normalization_factor(Kernel.poly(p), 2**L) == pytest.approx(oracles.alpha_1d(2**L, p), rel=1e-12)
    assert normalization_factor(Kernel.poly(p), 2**L, dim=2) == pytest.approx(oracles.alpha_2d(2**L, p), rel=1e-12)


@given(st.sampled_from([0.5, 1.0, 2.0]), st.sampled_from([0.0, 0.5, 1.0]), st.integers(2, 12))
def test_exp_closed_form_matches_oracle(q, k, L):
    got = normalization_factor(Kernel.expdecay(q, k), 2**L)
    assert got == pytest.approx(oracles.alpha_exp(2**L, q, k), rel=1e-12)


def test_branch_behavior():
    a2 = [normalization_factor(Kernel.poly(2), 2**L) for L in range(2, 21)]
    assert all(b > a for a, b in zip(a2, a2[1:])) and a2[-1] < 9.0
    r = [normalization_factor(Kernel.poly(0.5), 2**L) / 2 ** (L / 2) for L in range(10, 21)]
    assert abs(r[-1] - r[-2]) < abs(r[1] - r[0])


def test_near_degenerate_exponent_uses_log_branch():
    assert normalization_factor(Kernel.poly(1 + 1e-12), 1024) == 30.0


def test_closed_form_errors():
    with pytest.raises(ValueError):
        normalization_factor(Kernel(family="Log"), 64)
    with pytest.raises(ValueError):
        normalization_factor(Kernel.poly(1), 2)


# constructive path -----------------------------------------------------------

@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("N", [4, 16, 64, 256])
def test_constructive_alpha_matches_closed_form(p, N):
    oracle, split = plain(Kernel.poly(p, C=1), N)
    enc = encode_hierarchical(oracle, split, eps=1e-6)
    assert enc.alpha == pytest.approx(normalization_factor(oracle.kernel, N), rel=1e-12)
    assert enc.resources.oracle_queries["O_k"] == 2
    L = int(math.log2(N))
    assert enc.ancillas == L + math.ceil(math.log2(L)) + 3
    assert verify(enc, oracle.matrix()) <= enc.eps


def test_exact_matrix_not_approximation():
    oracle, split = plain(Kernel.poly(1, C=1), 32)
    enc = encode_hierarchical(oracle, split)
    np.testing.assert_allclose(enc.alpha * enc.block, oracle.matrix(), atol=1e-13)
    assert isometry_defect(enc) <= 1e-12


def test_2d_alpha():
    pts = PointSet.grid2d(8)
    oracle = EntryOracle(Kernel.poly(2, C=1), pts)
    enc = encode_hierarchical(oracle, hierarchical_split(pts, "Uniform2D"), eps=1e-6)
    assert enc.alpha == pytest.approx(normalization_factor(Kernel.poly(2), 8, dim=2), rel=1e-12)
    assert enc.resources.oracle_queries["O_k"] == 2
    assert verify(enc, oracle.matrix()) <= enc.eps


def variant_cases(N):
    g, c = PointSet.grid(N), PointSet.grid(N, periodic=True)
    return {
        "cyclic": (EntryOracle(Kernel.poly(2, C=1), c), hierarchical_split(c, "Cyclic")),
        "row": (EntryOracle(Kernel.poly(2, C=1), g, col_shift=3), hierarchical_split(g, "ShiftedRow", shift=3)),
        "skew": (EntryOracle(Kernel.poly(2, C=1, c=3), g), hierarchical_split(g, "ShiftedSkew", shift=3)),
        "exp": (EntryOracle(Kernel.expdecay(1.0, C=1), g), hierarchical_split(g)),
    }


@pytest.mark.parametrize("name", ["cyclic", "row", "skew", "exp"])
@pytest.mark.parametrize("N", [16, 64])
def test_variants_verify(name, N):
    oracle, split = variant_cases(N)[name]
    enc = encode_hierarchical(oracle, split, eps=1e-6)
    assert verify(enc, oracle.matrix()) <= enc.eps
    assert enc.resources.oracle_queries["O_k"] == 2
    if N <= 16:
        assert isometry_defect(enc) <= 1e-12


def test_cyclic_shift_covariance():
    oracle, split = variant_cases(32)["cyclic"]
    B = encode_hierarchical(oracle, split).block
    perm = np.roll(np.arange(32), 5)
    np.testing.assert_allclose(B[np.ix_(perm, perm)], B, atol=1e-14)


def test_block_level_prep_costs_at_most_log_n():
    oracle, split = plain(Kernel.poly(1, C=1), 64)
    assert encode_hierarchical(oracle, split, level_prep="block").params["prep_factor"] == 1.0
    oracle, split = plain(Kernel.poly(2, C=1), 64)
    exact = encode_hierarchical(oracle, split)
    charged = encode_hierarchical(oracle, split, level_prep="block")
    assert exact.alpha < charged.alpha <= exact.alpha * 6 + 1e-12
    assert verify(charged, oracle.matrix()) <= charged.eps + 1e-12


def test_mismatch_errors():
    pts = PointSet.grid(16)
    with pytest.raises(ValueError, match="cyclic"):
        encode_hierarchical(EntryOracle(Kernel.poly(1), pts), hierarchical_split(pts, "Cyclic"))
    with pytest.raises(ValueError):
        encode_hierarchical(EntryOracle(Kernel(family="Log"), pts), hierarchical_split(pts))
    with pytest.raises(ValueError):
        encode_hierarchical(EntryOracle(Kernel.poly(1, c=2), pts), hierarchical_split(pts))


def test_plan_split_of_alpha():
    oracle, split = plain(Kernel.poly(2), 1024)
    plan = plan_hierarchical(oracle, split)
    assert plan.adjacent_alpha == 3.0
    assert plan.alpha == 8.98828125


# norms -----------------------------------------------------------------------

def test_norm_lower_bound_values():
    o1 = EntryOracle(Kernel.poly(1), PointSet.grid(1024))
    assert norm_lower_bound(o1) >= math.log(1024) - 1
    ones = ArrayOracle(np.ones((8, 8)))
    assert norm_lower_bound(ones) == pytest.approx(8.0, rel=1e-15)
    vals = [norm_lower_bound(EntryOracle(Kernel.poly(2), PointSet.grid(n))) for n in (64, 256, 1024)]
    assert vals[0] < vals[1] < vals[2] < math.pi**2 / 3


@given(st.integers(2, 9), st.sampled_from([0.5, 1.0, 2.0]))
def test_norm_lower_bound_below_norm(L, p):
    o = EntryOracle(Kernel.poly(p), PointSet.grid(2**L))
    assert norm_lower_bound(o, check=False) <= operator_norm(o.matrix()) * (1 + 1e-12)


# general H-matrix ------------------------------------------------------------

def test_general_hmatrix_poly():
    oracle, split = plain(Kernel.poly(2, C=1), 32)
    H = compress(oracle, split, 8)
    enc = encode_general_hmatrix(H)
    assert verify(enc, H.to_dense()) <= max(enc.eps, 1e-12)
    assert enc.alpha <= 3 * normalization_factor(Kernel.poly(2), 32)


def test_general_hmatrix_constant_kernel():
    oracle, split = plain(Kernel.constant(1.0), 32)
    H = compress(oracle, split, 1)
    enc = encode_general_hmatrix(H)
    np.testing.assert_allclose(enc.alpha * enc.block, np.ones((32, 32)), atol=1e-12)
    assert enc.alpha >= 32 - 1e-12


# magnitude levels ------------------------------------------------------------

@given(st.floats(1e-6, 1.0))
def test_magnitude_level_definition(v):
    lv = int(magnitude_level(np.array([v]), 30)[0])
    assert 2.0 ** -(lv + 1) < v <= 2.0**-lv


def test_level_boundaries_are_closed_above():
    assert magnitude_level(np.array([1.0, 0.5, 0.25, 0.2]), 5).tolist() == [0, 1, 2, 2]


def test_magnitude_single_level():
    rng = np.random.default_rng(0)
    A = rng.uniform(0.5, 1, (32, 32))
    A = (A + A.T) / 2
    enc = encode_generalized_magnitude(A)
    assert enc.params["beta2"] == 32 and enc.alpha == 32 * 5
    assert enc.alpha / operator_norm(A) <= 2 * 5
    np.testing.assert_allclose(enc.alpha * enc.block, A, atol=1e-12)
    assert isometry_defect(enc) <= 1e-12
    exact = encode_generalized_magnitude(A, level_prep="exact")
    assert exact.alpha == 32


def test_magnitude_kernel_matrix():
    o = EntryOracle(Kernel.poly(1), PointSet.grid(256))
    enc = encode_generalized_magnitude(o)
    K = o.matrix()
    assert enc.alpha / operator_norm(K) <= 2 * 8 / enc.params["gamma"]
    np.testing.assert_allclose(enc.alpha * enc.block, K, atol=1e-12)


def test_magnitude_circulant_uniform_profile():
    N = 32
    i = np.arange(N)
    gap = np.abs(i[:, None] - i[None, :])
    C = 1.0 / (1 + np.minimum(gap, N - gap))
    enc = encode_generalized_magnitude(C)
    assert enc.params["gamma"] == 1.0
    ratio = enc.alpha / operator_norm(C)
    # gamma = 1: the bound 2 log N / gamma is met to within a factor 2
    assert 2 * 5 / 2 <= ratio <= 2 * 5


def test_magnitude_errors():
    with pytest.raises(ValueError):
        encode_generalized_magnitude(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValueError):
        encode_generalized_magnitude(np.full((4, 4), 2.0))
    A = np.full((4, 4), 0.75)
    with pytest.raises(ValueError, match="collid"):
        encode_generalized_magnitude(A, index_fn=lambda j, lv, k: 0)


def test_level_sets_exclude_zeros():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    sets = level_sets(A, 1)
    assert [s[0].tolist() for s in sets] == [[1], [0]]


# sparsification --------------------------------------------------------------

def test_required_band():
    assert required_band(Kernel.poly(2), 0.01) == 100
    assert 10 <= required_band(Kernel.expdecay(1.0), 1e-6) <= 20
    with pytest.raises(ValueError):
        required_band(Kernel.poly(1), 0.1)


def test_sparsify_p2():
    o = EntryOracle(Kernel.poly(2, C=1), PointSet.grid(1024))
    res = sparsify_band(o, 100)
    assert res.dense_error <= 0.011 * 3
    assert res.dense_error <= res.streamed_bound + 1e-12
    assert not res.divergent


def test_sparsify_p1_divergent():
    o = EntryOracle(Kernel.poly(1), PointSet.grid(256))
    res = sparsify_band(o, 8)
    assert res.divergent and res.analytic == pytest.approx(math.log(32))


def test_encode_sparsified():
    o = EntryOracle(Kernel.poly(2, C=1), PointSet.grid(64))
    enc = encode_sparsified(o, 5, 1e-6)
    assert enc.alpha == 9.0
    band = sparsify_band(o, 5, dense=False).band.toarray()
    assert verify(enc, band) <= enc.eps


# optimality ------------------------------------------------------------------

def test_optimality_p2_band():
    rep = optimality_report(Kernel.poly(2), [16, 32, 64, 128, 256])
    assert rep.checks["ratio_band_le_2"]
    assert rep.naive_exponent >= 0.8


def test_optimality_p1_bound():
    rep = optimality_report(Kernel.poly(1), [16, 64, 256])
    assert rep.checks["p1_ratio_bound"]
    for row in rep.rows:
        assert row["ratio"] <= 3 * math.log2(row["N"]) / math.log(row["N"]) + 0.01


def test_optimality_multiquadric_naive_is_flat():
    rep = optimality_report(Kernel(family="Multiquadric", c=0.25, domain_scale=1.0),
                            [16, 64, 256], points=lambda n: PointSet.grid(n, scale=1.0 / n))
    ratios = [r["naive_ratio"] for r in rep.rows]
    assert max(ratios) / min(ratios) <= 1.2 and abs(rep.naive_exponent) < 0.05
