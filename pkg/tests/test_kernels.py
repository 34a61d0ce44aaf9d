import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hblock.kernels import (
    ArrayOracle, EntryOracle, Family, Kernel, PointSet, assemble_dense, eval_kernel, exp_t,
    grid_number, level_max_entry,
)
from hblock.hsplit import hierarchical_split

import oracles


def test_poly_entries():
    o = EntryOracle(Kernel.poly(1), PointSet.grid(8))
    assert eval_kernel(o, 0, 4) == 0.25
    assert eval_kernel(o, 3, 3) == 0.0


def test_dense_small_matrices():
    K2 = assemble_dense(EntryOracle(Kernel.poly(1), PointSet.grid(2)))
    assert np.array_equal(K2, [[0, 1], [1, 0]])
    K4 = assemble_dense(EntryOracle(Kernel.poly(1), PointSet.grid(4)))
    np.testing.assert_allclose(K4[0], [0, 1, 1 / 2, 1 / 3], atol=2**-48)


def test_log_entry():
    K = assemble_dense(EntryOracle(Kernel(Family.LOG), PointSet.grid(4)))
    assert abs(K[0, 2] - math.log(2)) < 2**-48


def test_collocation_entry():
    N, lam = 8, 1 / 8
    o = EntryOracle(Kernel(Family.COLLOCATION, p=1, lam=lam), PointSet.grid(N, periodic=True))
    assert abs(o.eval(0, 4) - lam**2 / 16) < lam**2 * 2**-48


def test_out_of_range():
    o = EntryOracle(Kernel.poly(1), PointSet.grid(4))
    with pytest.raises(IndexError):
        o.eval(0, 4)


def test_level_bounds():
    assert level_max_entry(Kernel.poly(2), 4, 10) == 0.000244140625
    assert level_max_entry(Kernel.poly(0.7), 6, 6) == 1.0
    assert level_max_entry(Kernel.expdecay(1.0), 6, 8) == 0.125
    with pytest.raises(ValueError):
        level_max_entry(Kernel.poly(1), 1, 5)


def test_exp_t_selection():
    assert exp_t(1.0, 0.0) == 2
    assert exp_t(2.0, 0.0) == 1
    assert exp_t(0.5, 1.0) == 5


def test_dense_cap(monkeypatch):
    monkeypatch.setenv("HIERENC_DENSE_CAP", "16")
    with pytest.raises(ValueError):
        assemble_dense(EntryOracle(Kernel.poly(1), PointSet.grid(32)))


def test_json_roundtrip():
    k = Kernel.poly(1.5, C=0.5, domain_scale=2.0)
    assert Kernel.from_json(k.to_json()) == k
    with pytest.raises(ValueError):
        Kernel.from_json({"family": "PolyDecay", "bogus": 1})


def test_grid_numbering():
    assert [grid_number(i, j, 1) for i, j in [(0, 0), (0, 1), (1, 0), (1, 1)]] == [0, 1, 3, 2]
    for i in range(4):
        for j in range(4):
            assert grid_number(i, j, 2) == oracles.site_number_2d(i, j, 2)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_matches_loop_oracle(p):
    K = assemble_dense(EntryOracle(Kernel.poly(p, C=1.0), PointSet.grid(32)))
    np.testing.assert_allclose(K, oracles.poly_kernel(32, p, 1.0), atol=2**-48)


@pytest.mark.parametrize("family,kw", [
    (Family.POLY, {"p": 1.0}), (Family.LOG, {}), (Family.MULTIQUADRIC, {"c": 0.25}),
    (Family.EXP, {"q": 1.0}), (Family.POLYHARMONIC, {"p": 2.0}),
])
def test_symmetry(family, kw):
    K = assemble_dense(EntryOracle(Kernel(family, **kw), PointSet.grid(64, scale=1 / 64)))
    assert np.array_equal(K, K.T)


@pytest.mark.parametrize("N", [16, 64, 256])
def test_level_bounds_hold_on_blocks(N):
    for kernel in (Kernel.poly(1), Kernel.poly(2), Kernel.expdecay(1.0)):
        pts = PointSet.grid(N)
        o = EntryOracle(kernel, pts)
        split = hierarchical_split(pts)
        for b in split.blocks():
            peak = np.max(np.abs(o.block(b.rows, b.cols)))
            assert peak <= level_max_entry(kernel, b.level, split.L) + 2**-48


def test_quantization_error():
    rng = np.random.default_rng(7)
    o = EntryOracle(Kernel.poly(0.7), PointSet.grid(1024))
    i = rng.integers(0, 1024, 10_000)
    j = rng.integers(0, 1024, 10_000)
    q = np.array([o.block([a], [b])[0, 0] for a, b in zip(i[:2000], j[:2000])])
    e = np.array([o.exact_block([a], [b])[0, 0] for a, b in zip(i[:2000], j[:2000])])
    assert np.max(np.abs(q - e)) < 2**-48
    q = o.block(i, j).diagonal()
    e = o.exact_block(i, j).diagonal()
    assert np.max(np.abs(q - e)) < 2**-48


@given(st.integers(0, 63), st.integers(0, 63), st.floats(0.1, 3.0))
def test_poly_pointwise(i, j, p):
    o = EntryOracle(Kernel.poly(p), PointSet.grid(64))
    v = o.exact(i, j)
    assert v == pytest.approx(0.0 if i == j else abs(i - j) ** (-p), rel=1e-14, abs=0)
    assert o.eval(i, j) == o.eval(j, i)


@given(st.integers(1, 8).map(lambda k: 2**k), st.floats(-3, 3))
def test_array_oracle_quantized(n, shift):
    A = np.random.default_rng(n).uniform(-1, 1, (n, n)) + shift
    o = ArrayOracle(A, scale=4.0)
    assert np.max(np.abs(o.matrix() - A)) <= 4.0 * 2**-49
