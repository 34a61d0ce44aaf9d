"""Hierarchical block-encodings of kernel matrices and their alternatives.

The hierarchical encoding writes K = K_ad + sum_l K^(l). Each admissible
block of level l is encoded naively with entry bound k_max^(l), each level is
a block-sparse combination of its blocks, the adjacent part is a sparse
encoding, and the levels are summed by a linear combination whose weights are
the level normalization factors. Its normalization factor is

    alpha = d_ad * a_ad + sum_l d_l * m_l * k_max^(l),

with m_l the block size, d the declared sparsities (3 in 1D, 27 and 9 in 2D).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .blockenc import (
    FP_FLOOR,
    BlockEncoding,
    Parts,
    Placement,
    ResourceTally,
    _check_pow2,
    _complement,
    _coo,
    _naive_from_values,
    _replace,
    _round_amplitude,
    attenuate,
    encode_block_sparse,
    encode_low_rank,
    encode_sparse,
    linear_combine,
    make_prep_pair,
    pad_ancillas,
    pattern_oracles,
    rotation_bits,
)
from .hmatrix import HMatrix
from .hsplit import AdmissibleBlock, HSplit, block_sparsity
from .kernels import DECAY_FAMILIES, ArrayOracle, EntryOracle, Family, Kernel, level_max_entry
from .linalg import check_dense, dense_cap, ilog2, operator_norm

DEGENERATE_P = 1e-9
SPARSITY_1D = 3
SPARSITY_2D = 27
ADJACENT_2D = 9


# ---------------------------------------------------------------------------
# closed forms


def _geometric(r: float, terms: int) -> float:
    """sum_{k=0}^{terms-1} r^k."""
    if terms <= 0:
        return 0.0
    if abs(r - 1.0) < 1e-15:
        return float(terms)
    return (r**terms - 1.0) / (r - 1.0)


def normalization_factor(kernel: Kernel, N: int, dim: int = 1) -> float:
    """Closed-form alpha of the hierarchical encoding.

    1D: 3 + 3 sum_{l=2}^{L} 2^((L-l)(1-p)); 2D: 9 + 27 sum_{l=2}^{L} 2^((L-l)(2-p)),
    where in 2D ``N`` is the number of points per axis. ExpDecay replaces p by
    q t - k and carries the t! prefactor on the level terms.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    L = ilog2(N)
    if L < 2:
        raise ValueError("need N >= 4 for a hierarchical split")
    fam = kernel.family
    if fam == Family.POLY:
        pref, p = 1.0, kernel.p
    elif fam == Family.EXP:
        t = kernel.exp_t
        pref, p = float(math.factorial(t)), kernel.q * t - kernel.k
    else:
        raise ValueError(f"no closed form for {fam.value} kernels")
    head, per_level, decay = (3.0, 3.0, 1.0 - p) if dim == 1 else (9.0, 27.0, 2.0 - p)
    if abs(decay) < DEGENERATE_P:
        total = L - 1.0
    else:
        total = _geometric(2.0**decay, L - 1)
    return head + per_level * pref * total


def level_alpha(kernel: Kernel, level: int, L: int, dim: int = 1, n: Optional[int] = None) -> float:
    """Naive normalization of one admissible block of ``level``: size times entry bound."""
    m = 2 ** ((L - level) * dim)
    return m * level_max_entry(kernel, level, L, n)


# ---------------------------------------------------------------------------
# hierarchical encoding


def _check_variant(oracle: EntryOracle, split: HSplit) -> None:
    kernel = oracle.kernel
    if not kernel.has_decay_class:
        raise ValueError(f"{kernel.family.value} kernels have no level bound; use the naive encoding")
    if split.n != oracle.n:
        raise ValueError("split and oracle disagree on N")
    periodic = oracle.points.period is not None
    v = split.variant
    if v == "Cyclic" and not periodic:
        raise ValueError("the cyclic split needs a periodic point set")
    if v != "Cyclic" and periodic:
        raise ValueError(f"a periodic point set needs the cyclic split, not {v}")
    if v == "ShiftedRow" and oracle.col_shift != split.shift:
        raise ValueError("the oracle column shift must match the split shift")
    if v != "ShiftedRow" and oracle.col_shift:
        raise ValueError("a column-shifted oracle needs the ShiftedRow split")
    if v == "ShiftedSkew" and not (kernel.family == Family.POLY and kernel.c == split.shift):
        raise ValueError("the skew split needs a PolyDecay kernel whose offset equals the shift")
    if v != "ShiftedSkew" and kernel.family == Family.POLY and kernel.c != 0:
        raise ValueError("an offset PolyDecay kernel needs the ShiftedSkew split")
    if (v == "Uniform2D") != (oracle.points.dim == 2):
        raise ValueError("split dimension does not match the points")


def _placement(rows: np.ndarray, cols: np.ndarray, col_local: Optional[np.ndarray],
               key: tuple[int, int], m: int, variant: str) -> Placement:
    I, J = key
    if col_local is None:
        col_map = np.asarray(cols)
        first = 0
    else:
        col_map = np.full(m, -1, dtype=np.int64)
        col_map[col_local] = cols
        first = int(col_local[0])
    label: object = J
    if variant == "ShiftedSkew":
        shift = int(cols[0]) - (J * m + first)
        label = (1 if shift > 0 else -1, J)
    return Placement(I, label, np.asarray(rows), col_map)


def _declared_sparsity(split: HSplit, level: Optional[int]) -> tuple[int, int]:
    if split.variant == "ShiftedSkew":
        if level is None:
            return split.adjacent_sparsity()
        return block_sparsity(split, level)
    if split.dim == 2:
        return (ADJACENT_2D,) * 2 if level is None else (SPARSITY_2D,) * 2
    return (SPARSITY_1D, SPARSITY_1D)


def _adjacent_values(oracle: EntryOracle, split: HSplit) -> np.ndarray:
    adj = split.adjacent
    if len(adj) == 0:
        return np.zeros(0)
    vals = np.empty(len(adj))
    # evaluate row by row to keep the oracle calls vectorized
    order = np.lexsort((adj[:, 1], adj[:, 0]))
    rows = adj[order, 0]
    cuts = np.flatnonzero(np.diff(rows)) + 1
    for seg in np.split(order, cuts):
        i = int(adj[seg[0], 0])
        vals[seg] = oracle.block([i], adj[seg, 1])[0]
    return vals


def adjacent_bound(kernel: Kernel, values: np.ndarray) -> float:
    """Entry bound used for the adjacent part: 1 for decay families, else measured."""
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if kernel.family in DECAY_FAMILIES and peak <= 1.0:
        return 1.0
    return peak if peak > 0 else 1.0


def _sparse_from_pattern(values: np.ndarray, adj: np.ndarray, n: int, a_hat: float, d_r: int, d_c: int,
                         eps: float, meta: dict) -> BlockEncoding:
    M = np.zeros((n, n), dtype=values.dtype if values.size else float)
    if len(adj):
        M[adj[:, 0], adj[:, 1]] = values
    pattern = np.zeros((n, n), dtype=bool)
    if len(adj):
        pattern[adj[:, 0], adj[:, 1]] = True
    ro, co, _, _ = pattern_oracles(pattern)
    enc = encode_sparse(M, ro, co, d_r, d_c, a_hat, eps)
    # values already carry the oracle quantization; charge it and rename the entry oracle
    extra = 0.0 if meta["bits"] is None else math.sqrt(d_r * d_c) * meta["scale"] * 2.0 ** (-meta["bits"] - 1)
    q = dict(enc.resources.oracle_queries)
    q[meta["name"]] = q.pop("O_A")
    return _replace(enc, eps=enc.eps + extra,
                    resources=ResourceTally(q, enc.resources.gate_order, meta["bits"] or 0))


@dataclass(frozen=True)
class HierarchicalPlan:
    """Normalization bookkeeping of a hierarchical encoding, before any block is built."""

    L: int
    level_alphas: dict[int, float]
    level_bounds: dict[int, float]
    sparsity: dict[int, tuple[int, int]]
    adjacent_alpha: float
    adjacent_bound: float
    adjacent_sparsity: tuple[int, int]

    @property
    def alpha(self) -> float:
        total = self.adjacent_alpha
        for lv in sorted(self.level_alphas):
            total += self.level_alphas[lv]
        return total


def plan_hierarchical(oracle: EntryOracle, split: HSplit) -> HierarchicalPlan:
    _check_variant(oracle, split)
    kernel = oracle.kernel
    L = split.L
    adj_vals = _adjacent_values(oracle, split)
    a_ad = adjacent_bound(kernel, adj_vals)
    d_ad = _declared_sparsity(split, None)
    level_alphas, bounds, sparsity = {}, {}, {}
    for lv in sorted(split.levels):
        kmax = level_max_entry(kernel, lv, L, oracle.n)
        m = len(split.levels[lv][0].rows)
        d = _declared_sparsity(split, lv)
        bounds[lv] = kmax
        sparsity[lv] = d
        level_alphas[lv] = math.sqrt(d[0] * d[1]) * m * kmax
    return HierarchicalPlan(L, level_alphas, bounds, sparsity,
                            math.sqrt(d_ad[0] * d_ad[1]) * a_ad, a_ad, d_ad)


def encode_hierarchical(oracle: EntryOracle, split: HSplit, eps: float = 0.0,
                        level_prep: str = "exact") -> BlockEncoding:
    """Encoding of the exact kernel matrix through the hierarchical split.

    ``eps`` is split across sub-blocks in proportion to their normalization:
    every sub-encoding gets eps_unit * alpha_sub with eps_unit = eps / alpha.
    ``level_prep="block"`` charges the block-encoded level-weight preparation,
    which multiplies alpha by beta_hat * (#terms) / alpha.
    """
    if level_prep not in ("exact", "block"):
        raise ValueError("level_prep must be 'exact' or 'block'")
    plan = plan_hierarchical(oracle, split)
    n = oracle.n
    s = _check_pow2(n)
    meta = {"name": oracle.name, "bits": oracle.precision_bits, "scale": oracle.kernel.value_scale}
    eps_unit = eps / plan.alpha if eps > 0 else 0.0

    terms: list[BlockEncoding] = []
    adj_vals = _adjacent_values(oracle, split)
    d_ad = plan.adjacent_sparsity
    terms.append(_sparse_from_pattern(adj_vals, split.adjacent, n, plan.adjacent_bound, d_ad[0], d_ad[1],
                                      eps_unit * plan.adjacent_alpha, meta))
    for lv in sorted(split.levels):
        blocks = split.levels[lv]
        m = len(blocks[0].rows)
        kmax = plan.level_bounds[lv]
        sub_eps = eps_unit * m * kmax
        subs, places = [], []
        for b in blocks:
            values = _virtual_block(oracle, b, m)
            np.clip(values, -kmax, kmax, out=values)
            subs.append(_naive_from_values(values, kmax, sub_eps, meta))
            places.append(_placement(b.rows, b.cols, b.col_local, b.key, m, split.variant))
        d_r, d_c = plan.sparsity[lv]
        terms.append(encode_block_sparse(subs, places, n, d_r, d_c))
    enc = linear_combine(terms, make_prep_pair(np.ones(len(terms))), prep_name="P")
    params = {
        "variant": split.variant, "L": split.L, "shift": split.shift,
        "level_alphas": {str(k): v for k, v in plan.level_alphas.items()},
        "adjacent_alpha": plan.adjacent_alpha, "eps_unit": eps_unit, "level_prep": level_prep,
    }
    if level_prep == "block":
        beta_hat = max(t.alpha for t in terms)
        factor = beta_hat * len(terms) / enc.alpha
        enc = attenuate(enc, factor)
        params["prep_factor"] = factor
    return _replace(enc, tag="hierarchical", params=params, parents=tuple(terms))


def _virtual_block(oracle: EntryOracle, b: AdmissibleBlock, m: int) -> np.ndarray:
    vals = oracle.block(b.rows, b.cols)
    if b.mask is not None:
        vals = np.where(b.mask, vals, 0.0)
    if b.col_local is None:
        return np.array(vals, dtype=float)
    out = np.zeros((m, m))
    out[:, b.col_local] = vals
    return out


# ---------------------------------------------------------------------------
# norms and the general H-matrix path


def norm_lower_bound(oracle: Union[EntryOracle, ArrayOracle], check: bool = True, chunk: int = 256) -> float:
    """||K 1|| / sqrt(N), streamed in row chunks; a lower bound on ||K||."""
    n = oracle.n
    cols = np.arange(n)
    total = 0.0
    for start in range(0, n, chunk):
        rows = np.arange(start, min(n, start + chunk))
        rs = oracle.block(rows, cols).sum(axis=1)
        total += float(np.sum(np.abs(rs) ** 2))
    value = math.sqrt(total / n)
    if check:
        if n <= dense_cap():
            norm = operator_norm(oracle.matrix())
            if norm < value * (1 - 1e-12):
                raise AssertionError(f"||K|| = {norm} is below the bound {value}")
        k = getattr(oracle, "kernel", None)
        if (k is not None and k.family == Family.POLY and k.p == 1 and k.c == 0 and k.C >= 0
                and oracle.points.period is None and n >= 2):
            if value < math.log(n) - 1.0:
                raise AssertionError("row-sum bound below ln N - 1 for the 1/r kernel")
    return value


def encode_general_hmatrix(H: HMatrix, eps: float = 0.0) -> BlockEncoding:
    """Low-rank encodings per block, block-sparse per level, summed over levels.

    Each block's reconstructed factors are re-factored by SVD so the low-rank
    constructor receives orthonormal vectors; its normalization is the sum of
    the block's singular values. The encoded operator is H itself.
    """
    n = H.n
    _check_pow2(n)
    variant = H.split_info.get("variant", "Plain1D").split("(")[0]
    by_level: dict[int, list] = {}
    for b in H.blocks:
        by_level.setdefault(b.level, []).append(b)
    terms: list[BlockEncoding] = []
    adj = H.adjacent.tocoo()
    pairs = np.stack([adj.row, adj.col], axis=1).astype(np.int64)
    peak = float(np.max(np.abs(adj.data))) if adj.nnz else 1.0
    pat = np.zeros((n, n), dtype=bool)
    pat[adj.row, adj.col] = True
    _, _, dr, dc = pattern_oracles(pat)
    terms.append(_sparse_from_pattern(adj.data.astype(float), pairs, n, peak or 1.0, dr, dc, eps,
                                      {"name": "O_A", "bits": None, "scale": 1.0}))
    level_info = {}
    for lv in sorted(by_level):
        blocks = by_level[lv]
        m = len(blocks[0].rows)
        subs, places = [], []
        for b in blocks:
            full = np.zeros((m, m))
            local = np.arange(m) if b.col_local is None else b.col_local
            full[:, local] = b.dense()
            U, sig, Vh = np.linalg.svd(full)
            keep = sig > 1e-14 * max(sig[0], 1e-300)
            if not np.any(keep):
                continue
            k = int(np.count_nonzero(keep))
            enc = encode_low_rank(sig[:k], U[:, :k], Vh[:k].conj().T, make_prep_pair(sig[:k]))
            subs.append(enc)
            places.append(_placement(b.rows, b.cols, b.col_local, b.key, m, variant))
        if not subs:
            continue
        a = max(u.ancillas for u in subs)
        subs = [pad_ancillas(u, a - u.ancillas) for u in subs]
        rc = np.zeros(n, dtype=np.int64)
        cc = np.zeros(n, dtype=np.int64)
        for p in places:
            rc[p.rows] += 1
            cc[p.col_map[p.col_map >= 0]] += 1
        d_r, d_c = int(rc.max()), int(cc.max())
        enc = encode_block_sparse(subs, places, n, d_r, d_c, eps_rotation=eps or None)
        level_info[str(lv)] = {"alpha_hat": enc.params["alpha_hat"], "alpha": enc.alpha, "d": [d_r, d_c]}
        terms.append(enc)
    enc = linear_combine(terms, make_prep_pair(np.ones(len(terms))), prep_name="P")
    return _replace(enc, tag="general_hmatrix", params={"levels": level_info, "rank": str(H.rank)},
                    parents=tuple(terms))


# ---------------------------------------------------------------------------
# magnitude-level encoding


IndexFn = Callable[[int, int, int], int]


def magnitude_level(values: np.ndarray, L: int) -> np.ndarray:
    """Level l with 2^-(l+1) < |v| <= 2^-l, entries <= 2^-(L-1) folded into level L-1."""
    a = np.abs(values)
    with np.errstate(divide="ignore"):
        lv = np.ceil(-np.log2(np.where(a > 0, a, 1.0))).astype(np.int64)
    # exact powers of two sit on the closed upper boundary
    fix = np.where(a > 0, 2.0 ** (-lv.astype(float)), 1.0)
    lv = np.where((a > 0) & (fix < a), lv - 1, lv)
    lv = np.where(a > 0, lv, L - 1)
    return np.clip(lv, 0, L - 1)


def level_sets(A: np.ndarray, L: int, include_zeros: bool = False) -> list[list[np.ndarray]]:
    """sets[j][l] = sorted rows i of column j at magnitude level l."""
    levels = magnitude_level(A, L)
    out = []
    for j in range(A.shape[1]):
        col = levels[:, j]
        nz = np.abs(A[:, j]) > 0 if not include_zeros else np.ones(A.shape[0], dtype=bool)
        out.append([np.flatnonzero((col == lv) & nz) for lv in range(L)])
    return out


def banded_index_fn(A: np.ndarray, L: Optional[int] = None) -> IndexFn:
    """Enumerate each column's level set from top to bottom: f(j, l, k)."""
    L = L if L is not None else ilog2(A.shape[0])
    sets = level_sets(A, L)

    def f(j: int, lv: int, k: int) -> int:
        return int(sets[j][lv][k])

    return f


@dataclass(frozen=True)
class MagnitudeProfile:
    L: int
    n_max: np.ndarray
    n_min: np.ndarray
    gamma: float
    beta2: float


def magnitude_profile(A: np.ndarray, L: int) -> MagnitudeProfile:
    sets = level_sets(A, L)
    counts = np.array([[len(s) for s in col] for col in sets])
    n_max = counts.max(axis=0)
    n_min = counts.min(axis=0)
    used = n_max > 0
    gamma = float(np.min(n_min[used] / n_max[used])) if np.any(used) else 1.0
    beta2 = float(np.sum(n_max * 2.0 ** -np.arange(L)))
    return MagnitudeProfile(L, n_max, n_min, gamma, beta2)


def encode_generalized_magnitude(A: Union[np.ndarray, EntryOracle, ArrayOracle], index_fn: Optional[IndexFn] = None,
                                 gamma: Optional[float] = None, n_levels: Optional[int] = None,
                                 level_prep: str = "block", eps: float = 0.0) -> BlockEncoding:
    """Encoding of a Hermitian non-negative matrix through its magnitude level sets.

    Columns (and, by symmetry, rows) are prepared as sum_l sqrt(2^-l)/beta over
    their level-l entries, with a rotation by a_ij / 2^-l. Exact level weights
    give alpha = beta^2 with beta^2 = sum_l n_l 2^-l; preparing the weights by a
    uniform superposition over the L levels and a rotation (default) costs a
    factor L = log2 N.
    Zero entries are left out of the level sets.
    """
    if isinstance(A, (EntryOracle, ArrayOracle)):
        check_dense(A.n)
        A = A.matrix()
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    s = _check_pow2(n)
    L = n_levels if n_levels is not None else s
    if L < 1:
        raise ValueError("need at least one level")
    if not np.allclose(A, A.T, atol=0, rtol=0):
        raise ValueError("the magnitude encoding needs a symmetric matrix")
    if np.any(A < 0) or np.any(A > 1):
        raise ValueError("entries must lie in [0, 1]")
    if level_prep not in ("exact", "block"):
        raise ValueError("level_prep must be 'exact' or 'block'")
    prof = magnitude_profile(A, L)
    if gamma is not None:
        if np.any(prof.n_min < gamma * prof.n_max - 1e-12):
            raise ValueError(f"declared gamma = {gamma} is not met by the level sets")
    else:
        gamma = prof.gamma
    sets = level_sets(A, L)
    f = index_fn if index_fn is not None else banded_index_fn(A, L)
    # exhaustive check: f_j enumerates I_l(j) without collisions
    for j in range(n):
        seen = set()
        for lv in range(L):
            got = [f(j, lv, k) for k in range(len(sets[j][lv]))]
            if len(set(got)) != len(got) or seen.intersection(got):
                raise ValueError(f"index function collides in column {j}")
            if sorted(got) != sets[j][lv].tolist():
                raise ValueError(f"index function does not enumerate level {lv} of column {j}")
            seen.update(got)
    beta2 = prof.beta2
    Lu = 1 << max(0, math.ceil(math.log2(L)))
    charge = L if level_prep == "block" else 1
    alpha = beta2 * charge
    lvl = magnitude_level(A, L)
    bits = rotation_bits(n, eps)
    amp = np.where(A > 0, _round_amplitude(A / 2.0 ** (-lvl.astype(float)), bits), 0.0)
    block = amp * 2.0 ** (-lvl.astype(float)) / alpha
    err = (0.0 if bits is None else eps) + FP_FLOOR * alpha
    y = np.sqrt(prof.n_max * 2.0 ** -np.arange(L) / beta2)
    rot = level_prep == "block"

    # registers: [rot_R][lvl_R][row][rot_L][lvl_L][col][bit]
    invalid = int(max(np.sum(prof.n_max - [len(sets[j][lv]) for lv in range(L)]) for j in range(n)))
    Lreg = max(Lu, 2)
    while (Lreg - 1) * n < invalid:
        Lreg *= 2
    R2 = 2 if rot else 1
    dims = (R2, Lreg, n, R2, Lreg, n, 2)

    def idx(rr: int, lr: int, row: int, rl: int, ll: int, col: int, bit: int) -> int:
        out = 0
        for v, d in zip((rr, lr, row, rl, ll, col, bit), dims):
            out = out * d + v
        return out

    def side(j: int, right: bool) -> tuple[list[int], list[float]]:
        where, amps = [], []
        lvl_amp = (1 / math.sqrt(L)) if rot else 1.0
        counter = 0
        for lv in range(L):
            yl = y[lv]
            if rot and yl < 1:
                g = lvl_amp * math.sqrt(max(0.0, 1 - yl**2))
                where.append(idx(1, lv, 0, 0, 0, j, 0) if right else idx(0, 0, j, 1, lv, 0, 0))
                amps.append(g)
            if prof.n_max[lv] == 0:
                continue
            base = lvl_amp * yl / math.sqrt(prof.n_max[lv])
            members = sets[j][lv]
            for k in range(prof.n_max[lv]):
                if k < len(members):
                    i = int(members[k])
                    a = amp[i, j] if right else 1.0
                    if right:
                        where += [idx(0, 0, i, 0, 0, j, 0), idx(0, 0, i, 0, 0, j, 1)]
                        amps += [base * a, base * float(_complement(np.array(a)))]
                    else:
                        where.append(idx(0, 0, j, 0, 0, i, 0))
                        amps.append(base)
                else:
                    counter += 1
                    hi, lo = divmod(n + counter - 1, n)
                    where.append(idx(0, hi, lo, 0, 0, j, 0) if right else idx(0, 0, j, 0, hi, lo, 0))
                    amps.append(base)
        return where, amps

    def build() -> Parts:
        rr, rc, rv, lr, lc, lv_ = [], [], [], [], [], []
        for j in range(n):
            w, a = side(j, True)
            rr.append(np.array(w)); rc.append(np.full(len(w), j)); rv.append(np.array(a))
            w, a = side(j, False)
            lr.append(np.array(w)); lc.append(np.full(len(w), j)); lv_.append(np.array(a))
        D = int(np.prod(dims))
        return _coo(lr, lc, lv_, (D, n)), _coo(rr, rc, rv, (D, n))

    ancillas = int(round(math.log2(np.prod(dims)))) - s
    norm = operator_norm(A)
    bound = 2 * math.log2(n) / gamma * norm if gamma > 0 else math.inf
    if level_prep == "block" and L == s and alpha > bound * (1 + 1e-12):
        raise AssertionError(f"alpha = {alpha} exceeds 2 log N / gamma * ||A|| = {bound}")
    return BlockEncoding(
        alpha, ancillas, err, s, block,
        ResourceTally({"O_A": 2, "O_index": 2, "P_level": 2}, "O(polylog(N / eps))", 0),
        "magnitude_levels",
        {"beta2": beta2, "gamma": gamma, "levels": L, "level_prep": level_prep,
         "n_max": prof.n_max.tolist(), "bound": bound},
        (), build,
    )


# ---------------------------------------------------------------------------
# sparsification


@dataclass(frozen=True)
class SparsifyResult:
    band: sp.csr_matrix = field(repr=False)
    d: int
    dense_error: Optional[float]
    streamed_bound: float
    analytic: float
    divergent: bool


def required_band(kernel: Kernel, eps_s: float) -> int:
    """Band half-width d so the truncated tail is about eps_s."""
    if kernel.family == Family.POLY:
        if kernel.p <= 1:
            raise ValueError("polynomial kernels with p <= 1 cannot be sparsified")
        return math.ceil(eps_s ** (1.0 / (1.0 - kernel.p)))
    if kernel.family == Family.EXP:
        # smallest d with exp(-d^q) d^k <= eps_s
        d = 1
        while math.exp(-(d**kernel.q)) * d**kernel.k > eps_s:
            d += 1
        return d
    raise ValueError(f"no band rule for {kernel.family.value} kernels")


def sparsify_band(oracle: EntryOracle, d: int, dense: Optional[bool] = None, chunk: int = 256) -> SparsifyResult:
    """Keep |i - j| < d. The streamed bound is the largest row sum of |K - K_b|,
    which bounds the operator norm for symmetric kernels."""
    if d < 1:
        raise ValueError("band width must be >= 1")
    n = oracle.n
    kernel = oracle.kernel
    cols = np.arange(n)
    worst = 0.0
    data, ri, ci = [], [], []
    for start in range(0, n, chunk):
        rows = np.arange(start, min(n, start + chunk))
        blk = oracle.block(rows, cols)
        inside = np.abs(rows[:, None] - cols[None, :]) < d
        worst = max(worst, float(np.max(np.sum(np.where(inside, 0.0, np.abs(blk)), axis=1))))
        r, c = np.nonzero(inside)
        ri.append(rows[r]); ci.append(c); data.append(blk[r, c])
    band = sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))), shape=(n, n))
    if dense is None:
        dense = n <= 2048
    dense_err = None
    if dense:
        check_dense(n)
        dense_err = operator_norm(oracle.matrix() - band.toarray())
    divergent = kernel.family == Family.POLY and kernel.p <= 1
    if kernel.family == Family.POLY:
        p = kernel.p
        analytic = math.log(n / d) if abs(p - 1) < DEGENERATE_P else (n ** (1 - p) - d ** (1 - p)) / (1 - p)
    elif kernel.family == Family.EXP:
        from scipy.integrate import quad

        analytic = quad(lambda x: math.exp(-(x**kernel.q)) * x**kernel.k, d, n)[0]
    else:
        analytic = math.nan
    return SparsifyResult(band, d, dense_err, worst, float(analytic), divergent)


def encode_sparsified(oracle: EntryOracle, d: int, eps: float = 0.0) -> BlockEncoding:
    """Sparse encoding of the band |i - j| < d; alpha = (2d - 1) * max entry."""
    res = sparsify_band(oracle, d, dense=False)
    n = oracle.n
    M = res.band.toarray() if n <= dense_cap() else None
    if M is None:
        raise ValueError("N above the dense cap")
    ro, co, _, _ = pattern_oracles(np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]) < d)
    width = 2 * d - 1
    peak = float(np.max(np.abs(M)))
    return encode_sparse(M, ro, co, width, width, peak, eps)


# ---------------------------------------------------------------------------
# optimality table


@dataclass(frozen=True)
class OptimalityReport:
    rows: list[dict]
    ratio_band: float
    naive_exponent: float
    checks: dict


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def optimality_report(kernel: Kernel, Ns: Sequence[int], points: Optional[Callable[[int], object]] = None) -> OptimalityReport:
    """alpha, ||K||, alpha/||K|| and the naive N a_hat/||K|| for each N."""
    from .kernels import PointSet

    rows = []
    for N in Ns:
        pts = points(N) if points is not None else PointSet.grid(N)
        oracle = EntryOracle(kernel, pts)
        K = oracle.matrix()
        norm = operator_norm(K)
        a_hat = float(np.max(np.abs(K)))
        if kernel.family in (Family.POLY, Family.EXP) and kernel.c == 0 and N >= 4:
            alpha = normalization_factor(kernel, N)
        else:
            alpha = N * a_hat
        rows.append({"N": N, "alpha": alpha, "norm": norm, "ratio": alpha / norm,
                     "naive_ratio": N * a_hat / norm})
    ratios = [r["ratio"] for r in rows]
    band = max(ratios) / min(ratios)
    expo = _loglog_slope(Ns, [r["naive_ratio"] for r in rows]) if len(Ns) > 1 else math.nan
    checks = {"ratio_band_le_2": band <= 2.0}
    if kernel.family == Family.POLY and abs(kernel.p - 1) < DEGENERATE_P:
        checks["p1_ratio_bound"] = all(
            r["ratio"] <= 3 * math.log2(r["N"]) / math.log(r["N"]) + 0.01 for r in rows
        )
    if kernel.family == Family.POLY:
        checks["naive_exponent"] = expo
    return OptimalityReport(rows, band, expo, checks)
