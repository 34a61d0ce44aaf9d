"""Classical H-matrix: Taylor (or SVD) factors of admissible blocks and the fast matvec."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import binom

from .hsplit import AdmissibleBlock, Cluster, HSplit
from .kernels import EntryOracle, Family, Kernel
from .linalg import check_dense

MAGIC = b"HMATRIX1"
RankPolicy = Union[int, Mapping[int, int]]


@dataclass(frozen=True)
class LowRankFactors:
    """Block ~ Psi @ diag(D) @ Phi^H."""

    Psi: np.ndarray
    D: np.ndarray
    Phi: np.ndarray
    method: str = "taylor"

    @property
    def rank(self) -> int:
        return len(self.D)

    def reconstruct(self) -> np.ndarray:
        return (self.Psi * self.D) @ self.Phi.conj().T


# ---------------------------------------------------------------------------
# Taylor expansion about the column-cluster center


def _expansion_kernel(kernel: Kernel) -> Kernel:
    # skew blocks are read in virtual column coordinates, where the kernel is plain
    if kernel.family == Family.POLY and kernel.c != 0.0:
        return replace(kernel, c=0.0)
    return kernel


def has_taylor_rule(kernel: Kernel) -> bool:
    kernel = _expansion_kernel(kernel)
    return kernel.family in (Family.LOG, Family.POLY) or kernel.taylor is not None


def _separation(sigma: Cluster, rho: Cluster) -> tuple[float, float]:
    """Smallest |x - c_rho| over x in sigma, and the convergence ratio r_rho / that."""
    if np.ndim(sigma.coords) != 1:
        raise ValueError("Taylor factors are one-dimensional; use the SVD path in 2D")
    dmin = float(np.min(np.abs(sigma.coords - rho.center)))
    if dmin <= 0 or dmin < 2.0 * rho.radius:
        raise ValueError("block is not admissible: the Taylor series does not converge")
    return dmin, (rho.radius / dmin if rho.radius > 0 else 0.0)


def taylor_block(kernel: Kernel, sigma: Cluster, rho: Cluster, rank: int) -> LowRankFactors:
    """Rank-``rank`` expansion of k(x, x') in x' about the center of ``rho``."""
    if rank < 0:
        raise ValueError("rank must be non-negative")
    _separation(sigma, rho)
    kern = _expansion_kernel(kernel)
    x = sigma.coords
    c = float(rho.center)
    q = np.arange(rank)
    xc = x - c
    yc = rho.coords - c
    Phi = yc[:, None] ** q[None, :] if rank else np.zeros((len(yc), 0))
    if kern.family == Family.LOG:
        Psi = np.empty((len(x), rank))
        if rank:
            Psi[:, 0] = np.log(np.abs(xc))
        for k in range(1, rank):
            Psi[:, k] = (-1.0) ** (k - 1) * math.factorial(k - 1) / (-xc) ** k
        D = np.array([1.0 / math.factorial(int(k)) for k in q])
        return LowRankFactors(Psi, D, Phi, "taylor")
    if kern.family == Family.POLY:
        # |x - x'|^-p = |x - c|^-p * sum_q binom(p + q - 1, q) ((x' - c)/(x - c))^q
        a = np.abs(xc) ** (-kern.p)
        Psi = a[:, None] / xc[:, None] ** q[None, :]
        Phi = Phi * binom(kern.p + q - 1, q)[None, :]
        return LowRankFactors(Psi, np.ones(rank), Phi, "taylor")
    if kern.taylor is not None:
        Psi = np.stack([np.asarray(kern.taylor(x, c, int(k)), dtype=float) for k in q], axis=1) \
            if rank else np.zeros((len(x), 0))
        D = np.array([1.0 / math.factorial(int(k)) for k in q])
        return LowRankFactors(Psi, D, Phi, "taylor")
    raise ValueError(f"no derivative rule for {kern.family.value} kernels")


def taylor_bound(kernel: Kernel, sigma: Cluster, rho: Cluster, rank: int) -> Optional[float]:
    """Max-entry remainder bound, or None when the family has no analytic bound."""
    dmin, ratio = _separation(sigma, rho)
    kern = _expansion_kernel(kernel)
    if rank == 0:
        return None
    if kern.family == Family.POLY:
        terms = binom(kern.p + np.arange(rank, rank + 4000) - 1, np.arange(rank, rank + 4000))
        tail = float(np.sum(terms * ratio ** np.arange(rank, rank + 4000)))
        return dmin ** (-kern.p) * tail
    if kern.family == Family.LOG:
        k = np.arange(rank, rank + 4000)
        return float(np.sum(ratio**k / k))
    return None


def _exact_block(kernel: Kernel, sigma: Cluster, rho: Cluster) -> np.ndarray:
    kern = _expansion_kernel(kernel)
    r = np.abs(sigma.coords[:, None] - rho.coords[None, :])
    return kern.values(r)


def block_error(kernel: Kernel, sigma: Cluster, rho: Cluster, rank: int) -> float:
    """Measured max-entry error of the Taylor factors; checked against the analytic bound."""
    exact = _exact_block(kernel, sigma, rho)
    if rank == 0:
        return float(np.max(np.abs(exact)))
    approx = taylor_block(kernel, sigma, rho, rank).reconstruct()
    err = float(np.max(np.abs(exact - approx)))
    bound = taylor_bound(kernel, sigma, rho, rank)
    if bound is not None and err > bound * (1 + 1e-9) + 1e-15:
        raise AssertionError(f"Taylor error {err:.3e} exceeds bound {bound:.3e}")
    return err


def svd_block(block: np.ndarray, rank: int) -> LowRankFactors:
    U, s, Vh = np.linalg.svd(block, full_matrices=False)
    r = min(rank, len(s))
    return LowRankFactors(U[:, :r] * s[:r], np.ones(r), Vh[:r].conj().T, "svd")


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HBlock:
    """Factored admissible block with its placement in the matrix."""

    level: int
    key: tuple[int, int]
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    factors: LowRankFactors = field(repr=False)
    col_local: Optional[np.ndarray] = field(default=None, repr=False)
    mask: Optional[np.ndarray] = field(default=None, repr=False)
    mask_rule: Optional[str] = None

    def dense(self) -> np.ndarray:
        full = self.factors.reconstruct()
        if self.col_local is not None:
            full = full[:, self.col_local]
        if self.mask is not None:
            full = np.where(self.mask, full, 0.0)
        return full

    def moment_key(self) -> tuple:
        return (self.level, self.key[1], int(self.cols[0]), len(self.cols))


@dataclass(frozen=True)
class HMatrix:
    n: int
    rank: RankPolicy
    blocks: list[HBlock]
    adjacent: sp.csr_matrix
    split_info: dict
    split: Optional[HSplit] = field(default=None, compare=False)

    def rank_at(self, level: int) -> int:
        return _rank_at(self.rank, level)

    def methods(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for b in self.blocks:
            out[b.factors.method] = out.get(b.factors.method, 0) + 1
        return out

    def to_dense(self) -> np.ndarray:
        check_dense(self.n)
        M = self.adjacent.toarray().astype(np.result_type(self.adjacent.dtype, float))
        for b in self.blocks:
            M[np.ix_(b.rows, b.cols)] += b.dense()
        return M

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return hmatvec(self, v)

    # binary container --------------------------------------------------
    def to_bytes(self) -> bytes:
        header_blocks = []
        payload: list[np.ndarray] = []
        for b in self.blocks:
            f = b.factors
            contiguous = np.array_equal(b.cols, (int(b.cols[0]) + np.arange(len(b.cols))) % self.n)
            if not contiguous:
                raise ValueError("only contiguous (possibly wrapped) column ranges are exportable")
            header_blocks.append({
                "level": b.level,
                "key": list(b.key),
                "rows": [int(b.rows[0]), len(b.rows)],
                "cols": [int(b.cols[0]), len(b.cols)],
                "local": None if b.col_local is None else int(b.col_local[0]),
                "width": f.Phi.shape[0],
                "mask": b.mask_rule,
                "rank": f.rank,
                "method": f.method,
            })
            payload += [f.Psi.real, f.D.real, f.Phi.real]
        adj = self.adjacent.tocoo()
        header = {
            "split": self.split_info,
            "p": self.rank if isinstance(self.rank, int) else {str(k): v for k, v in self.rank.items()},
            "n": self.n,
            "blocks": header_blocks,
            "adjacent": int(adj.nnz),
        }
        raw = json.dumps(header, sort_keys=True).encode()
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in payload)
        adj_bytes = (np.asarray(adj.row, dtype="<i8").tobytes() + np.asarray(adj.col, dtype="<i8").tobytes()
                     + np.asarray(adj.data.real, dtype="<f8").tobytes())
        return MAGIC + struct.pack("<Q", len(raw)) + raw + body + adj_bytes

    @classmethod
    def from_bytes(cls, data: bytes) -> "HMatrix":
        if data[:8] != MAGIC:
            raise ValueError("not an H-matrix container")
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen])
        pos = 16 + hlen
        n = header["n"]

        def take(count: int, dtype: str) -> np.ndarray:
            nonlocal pos
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).copy()
            pos += count * 8
            return arr

        blocks = []
        for h in header["blocks"]:
            r0, nr = h["rows"]
            c0, nc = h["cols"]
            k, width = h["rank"], h["width"]
            Psi = take(nr * k, "<f8").reshape(nr, k)
            D = take(k, "<f8")
            Phi = take(width * k, "<f8").reshape(width, k)
            rows = np.arange(r0, r0 + nr)
            cols = (c0 + np.arange(nc)) % n
            local = None if h["local"] is None else h["local"] + np.arange(nc)
            mask = _mask_from_rule(h["mask"], rows, cols)
            blocks.append(HBlock(h["level"], tuple(h["key"]), rows, cols,
                                 LowRankFactors(Psi, D, Phi, h["method"]), local, mask, h["mask"]))
        nnz = header["adjacent"]
        ar, ac = take(nnz, "<i8"), take(nnz, "<i8")
        av = take(nnz, "<f8")
        adjacent = sp.csr_matrix((av, (ar, ac)), shape=(n, n))
        p = header["p"]
        rank = p if isinstance(p, int) else {int(k): v for k, v in p.items()}
        return cls(n, rank, blocks, adjacent, header["split"])


def _mask_from_rule(rule: Optional[str], rows: np.ndarray, cols: np.ndarray) -> Optional[np.ndarray]:
    if rule is None:
        return None
    if rule == "upper":
        return cols[None, :] >= rows[:, None]
    if rule == "lower":
        return cols[None, :] < rows[:, None]
    raise ValueError(f"unknown mask rule {rule!r}")


def _rank_at(rank: RankPolicy, level: int) -> int:
    if isinstance(rank, int):
        return rank
    return int(rank[level])


def _mask_rule(b: AdmissibleBlock) -> Optional[str]:
    if b.mask is None:
        return None
    if np.array_equal(b.mask, b.cols[None, :] >= b.rows[:, None]):
        return "upper"
    return "lower"


def compress(oracle: EntryOracle, split: HSplit, rank: RankPolicy, method: str = "auto") -> HMatrix:
    """Factor every admissible block at the requested rank; adjacent part stored sparsely.

    ``method`` is "taylor", "svd", or "auto" (Taylor when the kernel has a
    derivative rule and the geometry allows it, SVD of the dense block otherwise).
    """
    if method not in ("auto", "taylor", "svd"):
        raise ValueError("method must be auto, taylor or svd")
    kernel = oracle.kernel
    taylor_ok = (
        has_taylor_rule(kernel)
        and split.dim == 1
        and split.variant != "Cyclic"
        and oracle.points.period is None
    )
    if method == "taylor" and not taylor_ok:
        raise ValueError("Taylor factors unavailable for this kernel or split variant")
    use_taylor = taylor_ok and method != "svd"
    if not use_taylor:
        check_dense(oracle.n, "matrix for the SVD fallback")
    blocks = []
    for b in split.blocks():
        r = _rank_at(rank, b.level)
        if use_taylor:
            f = taylor_block(kernel, b.row_cluster, b.col_cluster, r)
            if b.col_local is None and f.Phi.shape[0] != len(b.cols):
                raise ValueError("cluster and block sizes disagree")
        else:
            dense = oracle.block(b.rows, b.cols)
            if b.mask is not None:
                dense = np.where(b.mask, dense, 0.0)
            f = svd_block(dense, r)
        local = b.col_local if use_taylor else None
        blocks.append(HBlock(b.level, b.key, b.rows, b.cols, f, local,
                             b.mask if use_taylor else None, _mask_rule(b) if use_taylor else None))
    adj = split.adjacent
    vals = np.array([oracle.eval(int(i), int(j)) for i, j in adj]) if len(adj) else np.zeros(0)
    adjacent = sp.csr_matrix((vals, (adj[:, 0], adj[:, 1])), shape=(oracle.n, oracle.n))
    return HMatrix(oracle.n, rank, blocks, adjacent, split.to_json(), split)


def hmatvec(H: HMatrix, v: np.ndarray, counter: Optional[dict] = None) -> np.ndarray:
    """y = sum_l K^(l) v + K_ad v through the factors.

    Taylor moments Phi^H v are computed once per column cluster and shared by
    every block reading that cluster. ``counter["flops"]`` accumulates
    multiply-add pairs counted as 2 operations.
    """
    v = np.asarray(v)
    if v.shape[0] != H.n:
        raise ValueError(f"vector length {v.shape[0]} does not match N = {H.n}")
    flops = 0
    y = np.asarray(H.adjacent @ v, dtype=np.result_type(v, float))
    flops += 2 * H.adjacent.nnz * (1 if v.ndim == 1 else v.shape[1])
    moments: dict[tuple, np.ndarray] = {}
    width = 1 if v.ndim == 1 else v.shape[1]
    for b in H.blocks:
        f = b.factors
        if b.mask is not None:
            blk = b.dense()
            y[b.rows] += blk @ v[b.cols]
            flops += 2 * blk.size * width
            continue
        key = b.moment_key() if f.method == "taylor" else None
        m = moments.get(key) if key is not None else None
        if m is None:
            Phi = f.Phi if b.col_local is None else f.Phi[b.col_local]
            m = Phi.conj().T @ v[b.cols]
            flops += 2 * Phi.size * width
            if key is not None:
                moments[key] = m
        coef = (f.D[:, None] * m) if v.ndim > 1 else f.D * m
        y[b.rows] += f.Psi @ coef
        flops += (2 * f.Psi.size + f.rank) * width
    if counter is not None:
        counter["flops"] = counter.get("flops", 0) + flops
    return y
