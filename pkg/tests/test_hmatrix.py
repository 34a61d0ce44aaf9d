import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hblock.hmatrix import HMatrix, block_error, compress, hmatvec, svd_block, taylor_block, taylor_bound
from hblock.hsplit import build_partition, hierarchical_split
from hblock.kernels import EntryOracle, Family, Kernel, PointSet

import oracles


def _setup(N, kernel, variant="Plain1D", shift=0):
    pts = PointSet.grid(N, periodic=variant == "Cyclic")
    oracle = EntryOracle(kernel, pts, col_shift=shift if variant == "ShiftedRow" else 0)
    return oracle, hierarchical_split(pts, variant, shift=shift)


@pytest.mark.parametrize("N", [16, 64, 256])
def test_matvec_accuracy(N):
    oracle, split = _setup(N, Kernel.poly(2, C=1))
    H = compress(oracle, split, 24)
    v = np.random.default_rng(N).standard_normal(N)
    ref = oracle.matrix() @ v
    assert np.linalg.norm(hmatvec(H, v) - ref) <= 1e-10 * np.linalg.norm(ref)


def test_taylor_bound_on_every_block():
    oracle, split = _setup(128, Kernel.poly(2))
    for b in split.blocks():
        err = block_error(oracle.kernel, b.row_cluster, b.col_cluster, 24)
        assert err <= 2.0**-24 * (2 * 24 + 4)


def test_bound_matches_series_oracle():
    pts = PointSet.grid(64)
    part = build_partition(64, 3, pts)
    sigma, rho = part[0], part[2]
    dmin = float(np.min(np.abs(sigma.coords - rho.center)))
    assert taylor_bound(Kernel.poly(2), sigma, rho, 10) == pytest.approx(
        oracles.taylor_poly_error(2, 10, dmin, rho.radius), rel=1e-10)


def test_rank_zero_and_inadmissible():
    part = build_partition(16, 2, PointSet.grid(16))
    assert block_error(Kernel.poly(1), part[0], part[2], 0) == pytest.approx(1 / 5)
    with pytest.raises(ValueError, match="not admissible"):
        taylor_block(Kernel.poly(1), part[0], part[1], 4)


def test_no_derivative_rule():
    part = build_partition(16, 2, PointSet.grid(16))
    with pytest.raises(ValueError, match="no derivative rule"):
        taylor_block(Kernel(Family.MULTIQUADRIC, c=1.0), part[0], part[2], 3)


def test_log_kernel_taylor():
    oracle, split = _setup(128, Kernel(Family.LOG))
    H = compress(oracle, split, 20, "taylor")
    assert np.max(np.abs(H.to_dense() - oracle.matrix())) < 1e-9


def test_constant_kernel_rank_one():
    oracle, split = _setup(32, Kernel.constant(1.0))
    H = compress(oracle, split, 1)
    np.testing.assert_allclose(H.to_dense(), np.ones((32, 32)), atol=1e-14)


@pytest.mark.parametrize("variant,shift", [("ShiftedRow", 3), ("Cyclic", 0)])
def test_variants(variant, shift):
    oracle, split = _setup(64, Kernel.poly(2, C=1), variant, shift)
    H = compress(oracle, split, 16)
    K = oracle.matrix()
    assert np.linalg.norm(H.to_dense() - K) <= 1e-3 * np.linalg.norm(K)


def test_skew_exact():
    pts = PointSet.grid(64)
    oracle = EntryOracle(Kernel.poly(2, C=1, c=3), pts)
    H = compress(oracle, hierarchical_split(pts, "ShiftedSkew", shift=3), 24)
    assert np.max(np.abs(H.to_dense() - oracle.matrix())) < 1e-12


def test_2d_svd():
    pts = PointSet.grid2d(8)
    oracle = EntryOracle(Kernel.poly(1, C=1), pts)
    H = compress(oracle, hierarchical_split(pts, "Uniform2D"), 64)
    assert set(H.methods()) == {"svd"}
    assert np.max(np.abs(H.to_dense() - oracle.matrix())) < 1e-12


def test_binary_roundtrip():
    oracle, split = _setup(64, Kernel.poly(1))
    H = compress(oracle, split, 8)
    H2 = HMatrix.from_bytes(H.to_bytes())
    assert np.array_equal(H.to_dense(), H2.to_dense())
    with pytest.raises(ValueError):
        HMatrix.from_bytes(b"garbage!" + H.to_bytes()[8:])


def test_flop_count_scaling():
    ratios = []
    for N in (64, 256, 1024):
        oracle, split = _setup(N, Kernel.poly(2))
        H = compress(oracle, split, 24)
        counter = {}
        hmatvec(H, np.ones(N), counter)
        ratios.append(counter["flops"] / (24 * N * math.log2(N)))
    assert max(ratios) / min(ratios) <= 2


@given(st.integers(1, 12), st.integers(4, 12))
def test_svd_block_rank(rank, n):
    A = np.random.default_rng(rank * 13 + n).standard_normal((n, n))
    f = svd_block(A, rank)
    assert f.rank == min(rank, n)
    if rank >= n:
        np.testing.assert_allclose(f.reconstruct(), A, atol=1e-10)


@given(st.integers(4, 8), st.floats(0.5, 3.0), st.integers(6, 20))
def test_taylor_error_below_bound(k, p, rank):
    N = 2**k
    pts = PointSet.grid(N)
    split = hierarchical_split(pts)
    kern = Kernel.poly(p)
    for b in list(split.blocks())[:20]:
        block_error(kern, b.row_cluster, b.col_cluster, rank)
