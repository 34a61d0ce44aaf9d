"""Level partitions, admissibility, and the hierarchical splitting K = sum_l K^(l) + K_ad.

Admissibility of the blocks placed by :func:`hierarchical_split` is decided on
the index cells of the clusters: every point owns a unit cell, so a 1D cluster
of m points has radius m/2 and two clusters whose cluster indices differ by
``delta`` are ``(delta - 1) * m`` apart. With eta = 2 this is the familiar
"not a neighbour" rule ``delta >= 2``. The point-based predicate
:func:`is_admissible` is kept separately and every placed block satisfies it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .kernels import PointSet, grid_number
from .linalg import ilog2, is_pow2

VARIANTS = ("Plain1D", "Cyclic", "ShiftedRow", "ShiftedSkew", "Uniform2D")
ETA_1D = 2.0
ETA_2D = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class Cluster:
    level: int
    index: int
    start: int
    stop: int
    center: np.ndarray | float
    radius: float
    coords: np.ndarray = field(repr=False)
    grid: Optional[tuple[int, int]] = None

    @property
    def members(self) -> range:
        return range(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


def _make_cluster(level: int, index: int, start: int, stop: int, coords: np.ndarray,
                  grid: Optional[tuple[int, int]] = None) -> Cluster:
    center = coords.mean(axis=0)
    dev = coords - center
    radius = float(np.max(np.abs(dev)) if coords.ndim == 1 else np.max(np.linalg.norm(dev, axis=1)))
    if coords.ndim == 1:
        center = float(center)
    return Cluster(level, index, start, stop, center, radius, coords, grid)


def build_partition(N: int, level: int, points: PointSet) -> list[Cluster]:
    """Clusters of ``level``: 2^level contiguous halves (1D) or 4^level squares (2D)."""
    if points.n != N:
        raise ValueError("N does not match the point set")
    if points.dim == 1:
        if not is_pow2(N):
            raise ValueError("N must be a power of two; run adaptive_mesh first")
        L = ilog2(N)
        if not 0 <= level <= L:
            raise ValueError(f"level must lie in 0..{L}")
        m = N >> level
        return [
            _make_cluster(level, I, I * m, (I + 1) * m, points.coords[I * m:(I + 1) * m])
            for I in range(1 << level)
        ]
    L = points.L
    if 4**L != N:
        raise ValueError("2D point sets must hold 4^L sites")
    if not 0 <= level <= L:
        raise ValueError(f"level must lie in 0..{L}")
    size = 4 ** (L - level)
    out = []
    for M in range(4**level):
        coords = points.coords[M * size:(M + 1) * size]
        side = 1 << (L - level)
        gi, gj = (int(v) // side for v in coords.min(axis=0))
        out.append(_make_cluster(level, M, M * size, (M + 1) * size, coords, (gi, gj)))
    return out


def cluster_distance(a: Cluster, b: Cluster) -> float:
    if a.coords.ndim == 1:
        if a.start == b.start and a.stop == b.stop:
            return 0.0
        lo_a, hi_a = a.coords.min(), a.coords.max()
        lo_b, hi_b = b.coords.min(), b.coords.max()
        return float(max(0.0, lo_b - hi_a, lo_a - hi_b))
    diff = a.coords[:, None, :] - b.coords[None, :, :]
    return float(np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff))))


def cluster_diameter(a: Cluster) -> float:
    if a.coords.ndim == 1:
        return float(a.coords.max() - a.coords.min())
    diff = a.coords[:, None, :] - a.coords[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


def is_admissible(sigma: Cluster, rho: Cluster, eta: Optional[float] = None) -> bool:
    """Point-based test: eta * max(radius) <= dist in 1D, eta * max(diam) <= dist in 2D."""
    if sigma.level != rho.level:
        raise ValueError("clusters must be on the same level")
    dist = cluster_distance(sigma, rho)
    if sigma.coords.ndim == 1:
        eta = ETA_1D if eta is None else eta
        return eta * max(sigma.radius, rho.radius) <= dist and dist > 0
    eta = ETA_2D if eta is None else eta
    return eta * max(cluster_diameter(sigma), cluster_diameter(rho)) <= dist and dist > 0


@dataclass(frozen=True, eq=False)
class AdmissibleBlock:
    """One admissible block; ``rows``/``cols`` are the matrix indices it touches.

    Clipped blocks (skew variant) keep the square cluster geometry: ``col_local``
    places each real column inside the cluster and ``mask`` marks the entries
    the block owns. Unmasked blocks own all of ``rows x cols``.
    """

    level: int
    row_cluster: Cluster
    col_cluster: Cluster
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    col_local: Optional[np.ndarray] = field(default=None, repr=False)
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def owned(self) -> np.ndarray:
        if self.mask is None:
            return np.ones((len(self.rows), len(self.cols)), dtype=bool)
        return self.mask

    def local_cols(self) -> np.ndarray:
        return np.arange(len(self.cols)) if self.col_local is None else self.col_local

    @property
    def key(self) -> tuple[int, int]:
        return (self.row_cluster.index, self.col_cluster.index)

    @property
    def size(self) -> int:
        return len(self.rows)


@dataclass(frozen=True, eq=False)
class HSplit:
    variant: str
    L: int
    n: int
    dim: int
    levels: dict[int, list[AdmissibleBlock]]
    adjacent: np.ndarray
    eta: float
    shift: int = 0

    def blocks(self) -> Iterator[AdmissibleBlock]:
        for level in sorted(self.levels):
            yield from self.levels[level]

    def coverage_counts(self) -> np.ndarray:
        """How many times each (i, j) is covered; a valid split is all ones."""
        cover = np.zeros((self.n, self.n), dtype=np.int32)
        for b in self.blocks():
            cover[np.ix_(b.rows, b.cols)] += b.owned()
        np.add.at(cover, (self.adjacent[:, 0], self.adjacent[:, 1]), 1)
        return cover

    def level_map(self) -> np.ndarray:
        """Level of the block covering (i, j); 0 marks the adjacent part."""
        lm = np.full((self.n, self.n), -1, dtype=np.int32)
        for b in self.blocks():
            sub = lm[np.ix_(b.rows, b.cols)]
            sub[b.owned()] = b.level
            lm[np.ix_(b.rows, b.cols)] = sub
        lm[self.adjacent[:, 0], self.adjacent[:, 1]] = 0
        return lm

    def adjacent_sparsity(self) -> tuple[int, int]:
        if len(self.adjacent) == 0:
            return (0, 0)
        r = np.bincount(self.adjacent[:, 0], minlength=self.n)
        c = np.bincount(self.adjacent[:, 1], minlength=self.n)
        return int(r.max()), int(c.max())

    def adjacent_bandwidth(self) -> int:
        if len(self.adjacent) == 0:
            return 0
        i, j = self.adjacent[:, 0], self.adjacent[:, 1]
        if self.dim == 2:
            side = 1 << self.L
            from .kernels import grid_numbering

            sites = grid_numbering(self.L)
            return int(np.max(np.abs(sites[i] - sites[j])))
        if self.variant == "Cyclic":
            d = np.abs(i - j)
            return int(np.max(np.minimum(d, self.n - d)))
        if self.variant == "ShiftedRow":
            d = np.abs(i - (j - self.shift) % self.n)
            return int(np.max(d))
        if self.variant == "ShiftedSkew":
            return int(np.max(np.abs(np.abs(i - j) - self.shift)))
        return int(np.max(np.abs(i - j)))

    def to_json(self) -> dict:
        return {
            "variant": self.variant if not self.shift else f"{self.variant}({self.shift})",
            "L": self.L,
            "levels": [
                {"level": lv, "blocks": [list(b.key) for b in self.levels[lv]]}
                for lv in sorted(self.levels)
            ],
            "adjacent_bandwidth": self.adjacent_bandwidth(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def block_sparsity(split: HSplit, level: int) -> tuple[int, int]:
    """Most blocks of ``level`` meeting any single row and any single column."""
    blocks = split.levels.get(level, [])
    if not blocks:
        return (0, 0)
    rc = np.zeros(split.n, dtype=np.int64)
    cc = np.zeros(split.n, dtype=np.int64)
    for b in blocks:
        own = b.owned()
        rc[b.rows[own.any(axis=1)]] += 1
        cc[b.cols[own.any(axis=0)]] += 1
    return int(rc.max()), int(cc.max())


def _virtual_cluster(level: int, J: int, m: int, h: float) -> Cluster:
    v = np.arange(J * m, (J + 1) * m) * h
    return _make_cluster(level, J, J * m, (J + 1) * m, v)


def _split_1d(points: PointSet, variant: str, c: int, eta: float) -> HSplit:
    n = points.n
    L = ilog2(n)
    h = float(points.coords[1] - points.coords[0]) if n > 1 else 1.0
    thr = 1.0 + eta / 2.0
    parts = {lv: build_partition(n, lv, points) for lv in range(2, L + 1)}
    vclusters: dict[tuple[int, int], Cluster] = {}

    if variant == "ShiftedSkew":
        # upper triangle reads column j as v = j - c, lower as v = j + c
        regions = [(c, True), (-c, False)]
    else:
        regions = [(0, None)]

    def delta(level: int, I: int, J: int) -> int:
        d = abs(I - J)
        if variant == "Cyclic":
            d %= 1 << level
            d = min(d, (1 << level) - d)
        return d

    def actual_cols(level: int, J: int, s: int) -> np.ndarray:
        m = n >> level
        v = np.arange(J * m, (J + 1) * m)
        if variant == "ShiftedRow":
            return (v + c) % n
        return v + s

    def region(level: int, I: int, J: int, s: int, upper: Optional[bool]) -> tuple[bool, bool]:
        if upper is None:
            return True, True
        m = n >> level
        r0, r1 = I * m, (I + 1) * m
        a0, a1 = J * m + s, (J + 1) * m + s
        lo, hi = max(a0, 0), min(a1, n)
        if lo >= hi:
            return False, False
        in_range = a0 >= 0 and a1 <= n
        if upper:
            return in_range and a0 >= r1 - 1, hi - 1 >= r0
        return in_range and a1 - 1 < r0, lo < r1 - 1

    levels: dict[int, list[AdmissibleBlock]] = {}
    adjacent: list[tuple[int, int]] = []
    for s, upper in regions:
        if upper is None:
            pending = [(0, 0)]
        else:
            pending = [(0, J) for J in range(math.floor(-s / n), math.floor((n - s - 1) / n) + 1)]
        for level in range(L + 1):
            nxt = []
            for I, J in pending:
                inside, meets = region(level, I, J, s, upper)
                if not meets:
                    continue
                adm = level >= 2 and delta(level, I, J) >= thr
                if adm:
                    if variant in ("ShiftedRow", "ShiftedSkew"):
                        key = (level, J)
                        if key not in vclusters:
                            vclusters[key] = _virtual_cluster(level, J, n >> level, h)
                        col = vclusters[key]
                    else:
                        col = parts[level][J]
                    row = parts[level][I]
                    rows = np.arange(row.start, row.stop)
                    cols = actual_cols(level, J, s)
                    if inside:
                        blk = AdmissibleBlock(level, row, col, rows, cols)
                    else:
                        keep = (cols >= 0) & (cols < n)
                        local = np.flatnonzero(keep)
                        cols = cols[keep]
                        if upper:
                            mask = cols[None, :] >= rows[:, None]
                        else:
                            mask = cols[None, :] < rows[:, None]
                        blk = AdmissibleBlock(level, row, col, rows, cols, local, mask)
                    levels.setdefault(level, []).append(blk)
                elif level == L:
                    j = int(actual_cols(level, J, s)[0])
                    adjacent.append((I, j))
                else:
                    nxt.extend((2 * I + a, 2 * J + b) for a in (0, 1) for b in (0, 1))
            pending = nxt
    for lv in levels:
        levels[lv].sort(key=lambda b: (b.row_cluster.index, b.col_cluster.index, int(b.cols[0])))
    adj = np.array(sorted(adjacent), dtype=np.int64).reshape(-1, 2)
    return HSplit(variant, L, n, 1, levels, adj, eta, c)


def _split_2d(points: PointSet, eta: float) -> HSplit:
    n = points.n
    L = points.L
    need = math.sqrt(2.0) * eta
    parts = {lv: build_partition(n, lv, points) for lv in range(2, L + 1)}
    by_grid = {lv: {cl.grid: cl for cl in parts[lv]} for lv in parts}
    levels: dict[int, list[AdmissibleBlock]] = {}
    adjacent: list[tuple[int, int]] = []
    pending = [((0, 0), (0, 0))]
    for level in range(L + 1):
        nxt = []
        for a, b in pending:
            g1 = max(0, abs(a[0] - b[0]) - 1)
            g2 = max(0, abs(a[1] - b[1]) - 1)
            adm = level >= 2 and math.hypot(g1, g2) >= need
            if adm:
                row, col = by_grid[level][a], by_grid[level][b]
                levels.setdefault(level, []).append(
                    AdmissibleBlock(level, row, col, np.arange(row.start, row.stop),
                                    np.arange(col.start, col.stop))
                )
            elif level == L:
                adjacent.append((grid_number(a[0], a[1], L), grid_number(b[0], b[1], L)))
            else:
                ca = [(2 * a[0] + x, 2 * a[1] + y) for x in (0, 1) for y in (0, 1)]
                cb = [(2 * b[0] + x, 2 * b[1] + y) for x in (0, 1) for y in (0, 1)]
                nxt.extend((u, v) for u in ca for v in cb)
        pending = nxt
    for lv in levels:
        levels[lv].sort(key=lambda blk: blk.key)
    adj = np.array(sorted(adjacent), dtype=np.int64).reshape(-1, 2)
    return HSplit("Uniform2D", L, n, 2, levels, adj, eta, 0)


def hierarchical_split(points: PointSet, variant: str = "Plain1D", eta: Optional[float] = None,
                       shift: int = 0) -> HSplit:
    """Hierarchical decomposition of the index square for the given variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if (variant == "Uniform2D") != (points.dim == 2):
        raise ValueError(f"variant {variant} does not match a {points.dim}D point set")
    if variant not in ("ShiftedRow", "ShiftedSkew") and shift:
        raise ValueError("shift is only meaningful for shifted variants")
    n = points.n
    if variant == "Uniform2D":
        return _split_2d(points, ETA_2D if eta is None else eta)
    if n <= 2:
        adj = np.array([(i, j) for i in range(n) for j in range(n)], dtype=np.int64).reshape(-1, 2)
        return HSplit(variant, max(0, n - 1), n, 1, {}, adj, ETA_1D if eta is None else eta, shift)
    if not is_pow2(n):
        raise ValueError("N must be a power of two; run adaptive_mesh first")
    if abs(shift) >= n:
        raise ValueError("shift must satisfy |c| < N")
    return _split_1d(points, variant, int(shift), ETA_1D if eta is None else eta)


@dataclass(frozen=True)
class Mesh:
    """Uniform unit-spacing mesh embedding an irregular point set."""

    points: PointSet
    sites: np.ndarray
    spacing: float
    origin: float


def adaptive_mesh(points: PointSet, min_sep: float, pad_pow2: bool = False) -> Mesh:
    """Map points onto a uniform mesh of spacing ``min_sep``; extra sites carry zero mass."""
    if points.dim != 1:
        raise ValueError("adaptive_mesh supports 1D point sets")
    if min_sep <= 0:
        raise ValueError("min_sep must be positive")
    x = points.coords
    if x.size > 1 and np.min(np.diff(x)) < min_sep * (1 - 1e-12):
        raise ValueError("points closer than min_sep would collide on the mesh")
    y = (x - x[0]) / min_sep
    sites = np.floor(y + 0.5).astype(np.int64)
    if len(np.unique(sites)) != len(sites):
        raise ValueError("two points map to the same mesh site")
    size = int(sites[-1]) + 1 if sites.size else 0
    if pad_pow2 and size > 0:
        size = 1 << max(0, math.ceil(math.log2(size)))
    masses = np.zeros(size)
    masses[sites] = points.masses if points.masses is not None else 1.0
    return Mesh(PointSet(np.arange(size, dtype=float), masses), sites, float(min_sep), float(x[0]))
