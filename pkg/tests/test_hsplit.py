import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hblock.hsplit import (
    ETA_1D, adaptive_mesh, block_sparsity, build_partition, cluster_distance, hierarchical_split,
    is_admissible,
)
from hblock.kernels import PointSet

import oracles


@pytest.mark.parametrize("N", [4, 8, 32, 128])
def test_plain_levels_match_oracle(N):
    split = hierarchical_split(PointSet.grid(N))
    assert np.array_equal(split.level_map(), oracles.level_map_1d(N))


@pytest.mark.parametrize("N", [8, 32, 128])
def test_cyclic_levels_match_oracle(N):
    split = hierarchical_split(PointSet.grid(N, periodic=True), "Cyclic")
    assert np.array_equal(split.level_map(), oracles.level_map_1d(N, cyclic=True))


@pytest.mark.parametrize("side", [4, 8])
def test_2d_levels_match_oracle(side):
    split = hierarchical_split(PointSet.grid2d(side), "Uniform2D")
    assert np.array_equal(split.level_map(), oracles.level_map_2d(side))


def test_smallest_split_has_six_admissible_entries():
    split = hierarchical_split(PointSet.grid(4))
    assert int(np.sum(split.level_map() > 0)) == 6


@pytest.mark.parametrize("variant,shift", [("Plain1D", 0), ("Cyclic", 0), ("ShiftedRow", 4),
                                           ("ShiftedSkew", 4), ("ShiftedSkew", 5)])
@pytest.mark.parametrize("N", [16, 64, 256])
def test_tiles_exactly_once(variant, shift, N):
    pts = PointSet.grid(N, periodic=variant == "Cyclic")
    split = hierarchical_split(pts, variant, shift=shift)
    assert np.all(split.coverage_counts() == 1)


@pytest.mark.parametrize("N", [16, 64, 256])
def test_sparsity_1d(N):
    for variant in ("Plain1D", "Cyclic", "ShiftedRow"):
        pts = PointSet.grid(N, periodic=variant == "Cyclic")
        split = hierarchical_split(pts, variant, shift=3 if variant == "ShiftedRow" else 0)
        for lv in split.levels:
            assert max(block_sparsity(split, lv)) <= 3
        assert max(split.adjacent_sparsity()) <= 3


def test_skew_sparsity_bounded():
    for N in (32, 128, 256):
        for c in (0, 4, 5):
            split = hierarchical_split(PointSet.grid(N), "ShiftedSkew", shift=c)
            for lv in split.levels:
                assert max(block_sparsity(split, lv)) <= (3 if c == 0 else 6)


def test_sparsity_2d():
    split = hierarchical_split(PointSet.grid2d(16), "Uniform2D")
    for lv in split.levels:
        assert max(block_sparsity(split, lv)) <= 27
    assert max(split.adjacent_sparsity()) <= 9


def test_cluster_geometry():
    pts = PointSet.grid(64)
    for level in range(7):
        for c in build_partition(64, level, pts):
            x = np.arange(c.start, c.stop, dtype=float)
            assert c.center == x.mean()
            assert c.radius == np.max(np.abs(x - x.mean()))
            assert c.size == 64 >> level


def test_blocks_admissible_and_not_coarser():
    pts = PointSet.grid(64)
    split = hierarchical_split(pts)
    for b in split.blocks():
        assert is_admissible(b.row_cluster, b.col_cluster)
        assert ETA_1D * max(b.row_cluster.radius, b.col_cluster.radius) <= cluster_distance(b.row_cluster, b.col_cluster)
        if b.level > 1:
            # cells [start - 1/2, stop - 1/2] of the parents touch or overlap
            I, J = b.key[0] // 2, b.key[1] // 2
            assert abs(I - J) < 2


def test_cyclic_adjacent_wraps():
    split = hierarchical_split(PointSet.grid(16, periodic=True), "Cyclic")
    pairs = {tuple(p) for p in split.adjacent}
    assert (0, 15) in pairs and (15, 0) in pairs


def test_bad_inputs():
    with pytest.raises(ValueError):
        hierarchical_split(PointSet.grid(12))
    with pytest.raises(ValueError):
        hierarchical_split(PointSet.grid(16), "Nope")
    with pytest.raises(ValueError):
        hierarchical_split(PointSet.grid(16), "Plain1D", shift=2)


def test_json_export():
    doc = json.loads(hierarchical_split(PointSet.grid(32)).dumps())
    assert doc["L"] == 5 and doc["adjacent_bandwidth"] == 1
    assert [lv["level"] for lv in doc["levels"]] == [2, 3, 4, 5]


def test_adaptive_mesh():
    pts = PointSet(np.array([0.0, 0.5, 2.0, 3.5]), np.array([1.0, 2.0, 3.0, 4.0]))
    mesh = adaptive_mesh(pts, 0.5, pad_pow2=True)
    assert mesh.points.n == 8
    assert list(mesh.sites) == [0, 1, 4, 7]
    assert mesh.points.masses.sum() == 10.0
    with pytest.raises(ValueError):
        adaptive_mesh(pts, 1.0)


@given(st.integers(2, 8), st.sampled_from(["Plain1D", "Cyclic"]))
def test_tiling_property(k, variant):
    N = 2**k
    split = hierarchical_split(PointSet.grid(N, periodic=variant == "Cyclic"), variant)
    assert np.all(split.coverage_counts() == 1)


@given(st.integers(4, 7), st.integers(1, 7), st.booleans())
def test_shifted_tiling_property(k, c, skew):
    N = 2**k
    split = hierarchical_split(PointSet.grid(N), "ShiftedSkew" if skew else "ShiftedRow", shift=c)
    assert np.all(split.coverage_counts() == 1)
