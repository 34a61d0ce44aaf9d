"""Block-encoding calculus: (alpha, a, eps) ledgers, constructors and their composition.

An encoding stores the normalized block B = <0^a|U|0^a> densely, so the
encoded operator is ``alpha * B``. Constructors that have an explicit
"prepare rows / prepare columns" structure also expose the two isometries
R, L : C^N -> C^(2^(s+a)) with B = L^H R; those are built lazily and exist to
witness that the block really sits inside a unitary.

Errors are tracked as operator-norm budgets:
  * controlled-rotation precision: r bits, entry error <= a_hat * 2^(-r-1);
  * oracle fixed-point values: b bits, entry error <= scale * 2^(-b-1);
  * a floating-point floor of 2^-40 * alpha for the simulation itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .kernels import ArrayOracle, EntryOracle
from .linalg import check_dense, ilog2, is_pow2, operator_norm

FP_FLOOR = 2.0**-40
UNITARY_QUBIT_CAP = 12
Parts = tuple[sp.csc_matrix, sp.csc_matrix]


# ---------------------------------------------------------------------------
# ledgers


@dataclass(frozen=True)
class ResourceTally:
    oracle_queries: Mapping[str, int] = field(default_factory=dict)
    gate_order: str = "O(1)"
    extra_ancillas: int = 0

    def to_json(self) -> dict:
        return {
            "oracle_queries": dict(sorted(self.oracle_queries.items())),
            "gate_order": self.gate_order,
            "extra_ancillas": self.extra_ancillas,
        }


def tally_select(tallies: Sequence[ResourceTally], extra: Optional[Mapping[str, int]] = None,
                 gate_order: str = "O(1)", extra_ancillas: int = 0) -> ResourceTally:
    """Tally of a controlled selection sum_k |k><k| (x) U_k: each oracle is used as
    often as the most demanding branch, plus the constructor's own queries."""
    q: dict[str, int] = {}
    for t in tallies:
        for name, cnt in t.oracle_queries.items():
            q[name] = max(q.get(name, 0), cnt)
    for name, cnt in (extra or {}).items():
        q[name] = q.get(name, 0) + cnt
    anc = max([t.extra_ancillas for t in tallies] + [extra_ancillas])
    return ResourceTally(q, gate_order, anc)


def tally_sequence(tallies: Sequence[ResourceTally], gate_order: str = "O(1)") -> ResourceTally:
    """Tally of operators applied one after another: counts add."""
    q: dict[str, int] = {}
    for t in tallies:
        for name, cnt in t.oracle_queries.items():
            q[name] = q.get(name, 0) + cnt
    return ResourceTally(q, gate_order, max([t.extra_ancillas for t in tallies] + [0]))


@dataclass(frozen=True, eq=False)
class BlockEncoding:
    """An (alpha, ancillas, eps)-block-encoding of an s-qubit operator."""

    alpha: float
    ancillas: int
    eps: float
    s: int
    block: np.ndarray = field(repr=False)
    resources: ResourceTally = field(default_factory=ResourceTally)
    tag: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    parents: tuple["BlockEncoding", ...] = field(default=(), repr=False)
    parts_builder: Optional[Callable[[], Parts]] = field(default=None, repr=False, compare=False)
    idle_ancillas: int = 0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.eps < 0 or self.ancillas < 0:
            raise ValueError("alpha, eps and ancillas must be non-negative")
        if self.block.shape != (self.n, self.n):
            raise ValueError("block shape does not match 2^s")

    @property
    def n(self) -> int:
        return 1 << self.s

    @property
    def register_dim(self) -> int:
        """Dimension of the registers represented by the isometries."""
        return 1 << (self.s + self.ancillas - self.idle_ancillas)

    def encoded(self) -> np.ndarray:
        return self.alpha * self.block

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.alpha * (self.block @ v)

    def block_norm(self) -> float:
        return operator_norm(self.block)

    def parts(self) -> Optional[Parts]:
        return None if self.parts_builder is None else self.parts_builder()

    def with_eps(self, eps: float) -> "BlockEncoding":
        return _replace(self, eps=eps)

    def ledger(self, max_children: int = 8) -> dict:
        return ledger_report(self, max_children)


def _replace(enc: BlockEncoding, **kw: Any) -> BlockEncoding:
    fields = dict(
        alpha=enc.alpha, ancillas=enc.ancillas, eps=enc.eps, s=enc.s, block=enc.block,
        resources=enc.resources, tag=enc.tag, params=enc.params, parents=enc.parents,
        parts_builder=enc.parts_builder, idle_ancillas=enc.idle_ancillas,
    )
    fields.update(kw)
    return BlockEncoding(**fields)


def ledger_report(enc: BlockEncoding, max_children: int = 8) -> dict:
    """JSON-ready provenance tree; long parent lists are truncated."""
    kids = [ledger_report(p, max_children) for p in enc.parents[:max_children]]
    out = {
        "tag": enc.tag,
        "alpha": enc.alpha,
        "ancillas": enc.ancillas,
        "eps": enc.eps,
        "s": enc.s,
        "params": {k: v for k, v in enc.params.items() if _jsonable(v)},
        "resources": enc.resources.to_json(),
        "parents": kids,
    }
    if len(enc.parents) > max_children:
        out["parents_omitted"] = len(enc.parents) - max_children
    return out


def _jsonable(v: Any) -> bool:
    return isinstance(v, (int, float, str, bool, type(None), list, tuple, dict))


# ---------------------------------------------------------------------------
# shared helpers


def rotation_bits(alpha: float, eps: float) -> Optional[int]:
    """Bits of controlled-rotation precision keeping the operator error <= eps / 2."""
    if eps <= 0 or alpha == 0:
        return None
    return max(1, math.ceil(math.log2(alpha / eps)))


def _round_amplitude(x: np.ndarray, bits: Optional[int]) -> np.ndarray:
    if bits is None:
        return x
    step = 2.0**-bits
    if np.iscomplexobj(x):
        return np.round(x.real / step) * step + 1j * np.round(x.imag / step) * step
    out = np.round(x / step) * step
    return np.clip(out, -1.0, 1.0)


def _complement(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(1.0 - np.abs(x) ** 2, 0.0, None))


def _oracle_values(source: Union[EntryOracle, ArrayOracle, np.ndarray]) -> tuple[np.ndarray, dict]:
    """Quantized matrix values plus their fixed-point description."""
    if isinstance(source, (EntryOracle, ArrayOracle)):
        check_dense(source.n)
        scale = source.scale
        return source.matrix(), {"name": source.name, "bits": source.precision_bits, "scale": scale}
    A = np.asarray(source)
    return A, {"name": "O_A", "bits": None, "scale": 1.0}


def _oracle_term(meta: dict, factor: float) -> float:
    if meta["bits"] is None:
        return 0.0
    return factor * meta["scale"] * 2.0 ** (-meta["bits"] - 1)


def _coo(rows: list, cols: list, vals: list, shape: tuple[int, int]) -> sp.csc_matrix:
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    return sp.csc_matrix((v, (r, c)), shape=shape)


def _check_pow2(n: int) -> int:
    if not is_pow2(n):
        raise ValueError(f"dimension {n} is not a power of two")
    return ilog2(n)


# ---------------------------------------------------------------------------
# naive dense


def _naive_from_values(values: np.ndarray, a_hat: float, eps: float, meta: dict,
                       gate_order: str = "O(polylog(N a_hat / eps))") -> BlockEncoding:
    N = values.shape[0]
    s = _check_pow2(N)
    if a_hat <= 0:
        raise ValueError("a_hat must be positive")
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak > a_hat * (1 + 1e-12):
        raise ValueError(f"a_hat = {a_hat:g} is below the largest entry {peak:g}")
    alpha = N * a_hat
    bits = rotation_bits(alpha, eps)
    amp = _round_amplitude(values / a_hat, bits)
    block = amp / N
    eps_total = (eps if bits is not None else 0.0) + _oracle_term(meta, N) + FP_FLOOR * alpha

    def build() -> Parts:
        # registers [row i][col j][rotation]
        i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        base = (i * N + j).ravel() * 2
        col = j.ravel()
        a = amp.ravel() / math.sqrt(N)
        b = _complement(amp).ravel() / math.sqrt(N)
        R = _coo([base, base + 1], [col, col], [a, b], (2 * N * N, N))
        L = _coo([base], [i.ravel()], [np.full(N * N, 1 / math.sqrt(N))], (2 * N * N, N))
        return L, R

    return BlockEncoding(
        alpha, s + 1, eps_total, s, block,
        ResourceTally({meta["name"]: 2}, gate_order, meta["bits"] or 0),
        "naive", {"a_hat": a_hat, "rotation_bits": bits, "requested_eps": eps},
        (), build,
    )


def encode_dense_naive(oracle: Union[EntryOracle, ArrayOracle, np.ndarray], a_hat: float,
                       eps: float = 0.0) -> BlockEncoding:
    """(N a_hat, s+1, eps) encoding from entry access: B_ij = a_ij / (N a_hat)."""
    values, meta = _oracle_values(oracle)
    return _naive_from_values(values, a_hat, eps, meta)


# ---------------------------------------------------------------------------
# sparse


IndexOracle = Callable[[int, int], int]


def pattern_oracles(pattern: np.ndarray | sp.spmatrix) -> tuple[IndexOracle, IndexOracle, int, int]:
    """Row/column index oracles for a nonzero pattern, padded past the last nonzero.

    ``row_oracle(i, k)`` is the column of the k-th nonzero in row i, or N + k when
    row i has fewer than k + 1 nonzeros; ``col_oracle`` is the transpose.
    """
    M = sp.csr_matrix(pattern, dtype=bool)
    N = M.shape[0]
    rows = [M.indices[M.indptr[i]:M.indptr[i + 1]].tolist() for i in range(N)]
    Mc = M.tocsc()
    cols = [Mc.indices[Mc.indptr[j]:Mc.indptr[j + 1]].tolist() for j in range(N)]
    d_r = max((len(r) for r in rows), default=0)
    d_c = max((len(c) for c in cols), default=0)

    def row_oracle(i: int, k: int) -> int:
        r = rows[i]
        return sorted(r)[k] if k < len(r) else N + k

    def col_oracle(j: int, k: int) -> int:
        c = cols[j]
        return sorted(c)[k] if k < len(c) else N + k

    return row_oracle, col_oracle, max(d_r, 1), max(d_c, 1)


def band_oracles(N: int, width: int, cyclic: bool = False) -> tuple[IndexOracle, IndexOracle, int, int]:
    """Index oracles for the band |i - j| <= width."""
    offs = np.arange(-width, width + 1)
    pattern = np.zeros((N, N), dtype=bool)
    for o in offs:
        i = np.arange(N)
        j = i + o
        ok = slice(None) if cyclic else (j >= 0) & (j < N)
        pattern[i[ok], (j % N)[ok]] = True
    return pattern_oracles(pattern)


def encode_sparse(oracle: Union[EntryOracle, ArrayOracle, np.ndarray], row_index_oracle: IndexOracle,
                  col_index_oracle: IndexOracle, d_r: int, d_c: int, a_hat: float,
                  eps: float = 0.0, row_oracle_name: str = "O_r",
                  col_oracle_name: str = "O_c") -> BlockEncoding:
    """(a_hat sqrt(d_r d_c), s+3, eps) encoding of a d_r-row / d_c-column sparse matrix."""
    values, meta = _oracle_values(oracle)
    N = values.shape[0]
    s = _check_pow2(N)
    row_lists = [[row_index_oracle(i, k) for k in range(d_r)] for i in range(N)]
    col_lists = [[col_index_oracle(j, k) for k in range(d_c)] for j in range(N)]
    in_rows = np.zeros((N, N), dtype=bool)
    in_cols = np.zeros((N, N), dtype=bool)
    for i, lst in enumerate(row_lists):
        for j in lst:
            if not 0 <= j < 2 * N:
                raise ValueError("row index oracle returned an index outside 0..2N-1")
            if j < N:
                in_rows[i, j] = True
    for j, lst in enumerate(col_lists):
        for i in lst:
            if not 0 <= i < 2 * N:
                raise ValueError("column index oracle returned an index outside 0..2N-1")
            if i < N:
                in_cols[i, j] = True
    if not np.array_equal(in_rows, in_cols):
        raise ValueError("row and column index oracles describe different patterns")
    if np.any((values != 0) & ~in_rows):
        raise ValueError("sparsity bound violated: a nonzero entry lies outside the declared pattern")
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak > a_hat * (1 + 1e-12):
        raise ValueError(f"a_hat = {a_hat:g} is below the largest entry {peak:g}")
    scale = math.sqrt(d_r * d_c)
    alpha = a_hat * scale
    bits = rotation_bits(alpha, eps)
    amp = np.where(in_rows, _round_amplitude(values / a_hat, bits), 0.0)
    block = amp / scale
    eps_total = (eps if bits is not None else 0.0) + _oracle_term(meta, scale) + FP_FLOOR * alpha

    def build() -> Parts:
        # registers [row, padded to 2N][col, padded to 2N][rotation]
        M = 2 * N
        rr, rc, rv = [], [], []
        for j, lst in enumerate(col_lists):
            for i in lst:
                base = (i * M + j) * 2
                a = amp[i, j] if i < N else 0.0
                rr.append([base, base + 1])
                rc.append([j, j])
                rv.append([a / math.sqrt(d_c), _complement(np.array(a)) / math.sqrt(d_c)])
        lr, lc, lv = [], [], []
        for i, lst in enumerate(row_lists):
            for j in lst:
                lr.append([(i * M + j) * 2])
                lc.append([i])
                lv.append([1 / math.sqrt(d_r)])
        shape = (2 * M * M, N)
        R = _coo([np.array(x) for x in rr], [np.array(x) for x in rc],
                 [np.array(x, dtype=amp.dtype) for x in rv], shape)
        L = _coo([np.array(x) for x in lr], [np.array(x) for x in lc], [np.array(x) for x in lv], shape)
        return L, R

    return BlockEncoding(
        alpha, s + 3, eps_total, s, block,
        ResourceTally({meta["name"]: 2, row_oracle_name: 1, col_oracle_name: 1},
                      "O(s + polylog(a_hat sqrt(d_r d_c) / eps))", meta["bits"] or 0),
        "sparse", {"a_hat": a_hat, "d_r": d_r, "d_c": d_c, "rotation_bits": bits},
        (), build,
    )


# ---------------------------------------------------------------------------
# block-sparse


@dataclass(frozen=True)
class Placement:
    """Where a sub-block sits: its actual rows and, per local column, the actual
    column (-1 for a local column that falls outside the matrix)."""

    row_label: Hashable
    col_label: Hashable
    rows: np.ndarray
    col_map: np.ndarray


def aligned_placements(keys: Sequence[tuple[int, int]], m: int) -> list[Placement]:
    """Placements of blocks (I, J) on the regular grid of m x m blocks."""
    return [
        Placement(I, J, np.arange(I * m, (I + 1) * m), np.arange(J * m, (J + 1) * m))
        for I, J in keys
    ]


def _pow2_at_least(x: int) -> int:
    return 1 << max(0, math.ceil(math.log2(max(x, 1))))


def encode_block_sparse(subs: Sequence[BlockEncoding], placements: Sequence[Placement], n: int,
                        d_r: int, d_c: int, eps_rotation: Optional[float] = None,
                        row_oracle_name: str = "O_r", col_oracle_name: str = "O_c",
                        alpha_oracle_name: str = "O_alpha") -> BlockEncoding:
    """Block-sparse combination: (alpha_hat sqrt(d_r d_c), t+a+3, 2 sqrt(d_r d_c) eps).

    With equal sub-alphas the alpha oracle and its rotation qubit are dropped,
    giving (alpha_hat sqrt(d_r d_c), t+a+2, sqrt(d_r d_c) eps). Register sizes
    are chosen to hold every block label plus the padded sparsity slots, which
    reproduces t+1 qubits per side for regular grids.
    """
    if len(subs) != len(placements) or not subs:
        raise ValueError("need one placement per sub-encoding")
    a = subs[0].ancillas
    s_sub = subs[0].s
    if any(u.ancillas != a or u.s != s_sub for u in subs):
        raise ValueError("sub-encodings must share ancilla count and size (pad them first)")
    if any(u.idle_ancillas != subs[0].idle_ancillas for u in subs):
        raise ValueError("sub-encodings must share idle ancilla counts")
    s_big = _check_pow2(n)
    m = 1 << s_sub
    row_labels = sorted({p.row_label for p in placements}, key=repr)
    col_labels = sorted({p.col_label for p in placements}, key=repr)
    rid = {lab: k for k, lab in enumerate(row_labels)}
    cid = {lab: k for k, lab in enumerate(col_labels)}
    row_slot: dict[int, tuple] = {}
    col_slot: dict[int, tuple] = {}
    row_blocks: dict[int, list[int]] = {}
    col_blocks: dict[int, list[int]] = {}
    seen: set = set()
    for b, p in enumerate(placements):
        if len(p.rows) != m or len(p.col_map) != m:
            raise ValueError("placement size does not match the sub-encoding")
        key = (p.row_label, p.col_label)
        if key in seen:
            raise ValueError(f"duplicate block {key}")
        seen.add(key)
        for loc, r in enumerate(p.rows):
            r = int(r)
            if row_slot.setdefault(r, (p.row_label, loc)) != (p.row_label, loc):
                raise ValueError(f"row {r} is placed inconsistently")
            row_blocks.setdefault(r, []).append(b)
        for loc, c in enumerate(p.col_map):
            c = int(c)
            if c < 0:
                continue
            if c >= n:
                raise ValueError("placement column outside the matrix")
            col_blocks.setdefault(c, []).append(b)
            col_slot.setdefault((p.col_label, loc), c)
            if col_slot[(p.col_label, loc)] != c:
                raise ValueError(f"column label {p.col_label!r} maps two columns to one slot")
    if any(len(v) > d_r for v in row_blocks.values()):
        raise ValueError("declared row sparsity is exceeded")
    if any(len(v) > d_c for v in col_blocks.values()):
        raise ValueError("declared column sparsity is exceeded")

    alphas = np.array([u.alpha for u in subs])
    a_hat = float(alphas.max())
    uniform = bool(np.all(alphas == a_hat))
    sub_eps = max(u.eps for u in subs)
    scale = math.sqrt(d_r * d_c)
    if uniform:
        ratio = np.ones(len(subs))
        bits = None
        err = scale * sub_eps
    else:
        bits = rotation_bits(a_hat, sub_eps if eps_rotation is None else eps_rotation)
        ratio = _round_amplitude(alphas / a_hat, bits)
        rot_eps = 0.0 if bits is None else a_hat * 2.0 ** (-bits - 1)
        err = scale * (sub_eps + rot_eps)
    dtype = np.result_type(*[u.block.dtype for u in subs], float)
    block = np.zeros((n, n), dtype=dtype)
    for u, p, w in zip(subs, placements, ratio):
        ok = p.col_map >= 0
        block[np.ix_(p.rows, p.col_map[ok])] += (w / scale) * u.block[:, ok]

    Rr = _pow2_at_least(len(row_labels) + d_c)
    Rc = _pow2_at_least(len(col_labels) + d_r)
    D_sub = subs[0].register_dim
    rot = 1 if uniform else 2
    D_big = Rr * Rc * D_sub * rot
    total_qubits = ilog2(D_big) + subs[0].idle_ancillas
    ancillas = total_qubits - s_big
    if D_sub * len(row_labels) * rot < n or Rc * D_sub * rot < n:
        raise ValueError("register layout cannot hold the padding states")

    def build() -> Parts:
        sub_parts = [u.parts() for u in subs]
        if any(sp_ is None for sp_ in sub_parts):
            raise ValueError("a sub-encoding has no isometry parts")
        isq_c = 1 / math.sqrt(d_c)
        isq_r = 1 / math.sqrt(d_r)
        rr, rc, rv, lr, lc, lv = [], [], [], [], [], []
        for b, (p, (Ls, Rs)) in enumerate(zip(placements, sub_parts)):
            I, J = rid[p.row_label], cid[p.col_label]
            off = (I * Rc + J) * D_sub
            Rs = Rs.tocoo()
            keep = p.col_map[Rs.col] >= 0
            x, loc, val = Rs.row[keep], Rs.col[keep], Rs.data[keep]
            if uniform:
                rr.append((off + x) * rot)
                rc.append(p.col_map[loc])
                rv.append(val * isq_c)
            else:
                w = ratio[b]
                rr += [(off + x) * 2, (off + x) * 2 + 1]
                rc += [p.col_map[loc]] * 2
                rv += [val * w * isq_c, val * _complement(np.array(w)) * isq_c]
            Ls = Ls.tocoo()
            lr.append((off + Ls.row) * rot)
            lc.append(p.rows[Ls.col])
            lv.append(Ls.data * isq_r)
        # padding slots: right pads live in row labels >= #rows, left pads in col labels >= #cols
        for c in range(n):
            used = len(col_blocks.get(c, []))
            for k in range(used, d_c):
                I = len(row_labels) + k
                rr.append(np.array([I * Rc * D_sub * rot + c]))
                rc.append(np.array([c]))
                rv.append(np.array([isq_c]))
        for r in range(n):
            used = len(row_blocks.get(r, []))
            for k in range(used, d_r):
                J = len(col_labels) + k
                I, rest = divmod(r, D_sub * rot)
                lr.append(np.array([((I * Rc + J) * D_sub) * rot + rest]))
                lc.append(np.array([r]))
                lv.append(np.array([isq_r]))
        shape = (D_big, n)
        return _coo(lr, lc, lv, shape), _coo(rr, rc, rv, shape)

    extra = {row_oracle_name: 1, col_oracle_name: 1}
    if not uniform:
        extra[alpha_oracle_name] = 2
    tally = tally_select([u.resources for u in subs], extra, "O(t + polylog(alpha_hat / eps))")
    return BlockEncoding(
        a_hat * scale, ancillas, err + FP_FLOOR * a_hat * scale, s_big, block, tally, "block_sparse",
        {"d_r": d_r, "d_c": d_c, "alpha_hat": a_hat, "uniform_alpha": uniform, "blocks": len(subs),
         "rotation_bits": bits},
        tuple(subs), build, subs[0].idle_ancillas,
    )


def encode_block_diagonal(subs: Sequence[BlockEncoding], eps_rotation: Optional[float] = None,
                          alpha_oracle_name: str = "O_alpha") -> BlockEncoding:
    """Direct sum of 2^t encodings: (alpha_hat, a+1, 2 eps), or (alpha_hat, a, eps) for equal alphas."""
    k = len(subs)
    if k == 0 or not is_pow2(k):
        raise ValueError("block-diagonal needs 2^t sub-encodings")
    a = subs[0].ancillas
    s_sub = subs[0].s
    if any(u.ancillas != a or u.s != s_sub for u in subs):
        raise ValueError("sub-encodings must share ancilla count and size (pad them first)")
    t = ilog2(k)
    m = 1 << s_sub
    alphas = np.array([u.alpha for u in subs])
    a_hat = float(alphas.max())
    uniform = bool(np.all(alphas == a_hat))
    sub_eps = max(u.eps for u in subs)
    if uniform:
        ratio, bits, err = np.ones(k), None, sub_eps
    else:
        bits = rotation_bits(a_hat, sub_eps if eps_rotation is None else eps_rotation)
        ratio = _round_amplitude(alphas / a_hat, bits)
        err = sub_eps + (0.0 if bits is None else a_hat * 2.0 ** (-bits - 1))
    n = k * m
    dtype = np.result_type(*[u.block.dtype for u in subs], float)
    block = np.zeros((n, n), dtype=dtype)
    for j, (u, w) in enumerate(zip(subs, ratio)):
        block[j * m:(j + 1) * m, j * m:(j + 1) * m] = w * u.block
    D_sub = subs[0].register_dim
    rot = 1 if uniform else 2

    def build() -> Parts:
        # registers [block j][sub-encoding][rotation]
        rr, rc, rv, lr, lc, lv = [], [], [], [], [], []
        for j, (u, w) in enumerate(zip(subs, ratio)):
            parts = u.parts()
            if parts is None:
                raise ValueError("a sub-encoding has no isometry parts")
            Ls, Rs = (x.tocoo() for x in parts)
            off = j * D_sub
            if uniform:
                rr.append(off + Rs.row)
                rc.append(j * m + Rs.col)
                rv.append(Rs.data)
            else:
                rr += [(off + Rs.row) * 2, (off + Rs.row) * 2 + 1]
                rc += [j * m + Rs.col] * 2
                rv += [Rs.data * w, Rs.data * _complement(np.array(w))]
            lr.append((off + Ls.row) * rot)
            lc.append(j * m + Ls.col)
            lv.append(Ls.data)
        shape = (k * D_sub * rot, n)
        return _coo(lr, lc, lv, shape), _coo(rr, rc, rv, shape)

    extra = {} if uniform else {alpha_oracle_name: 2}
    tally = tally_select([u.resources for u in subs], extra, "O(polylog(alpha_hat / eps))")
    return BlockEncoding(
        a_hat, a + (0 if uniform else 1), err + FP_FLOOR * a_hat, t + s_sub, block, tally,
        "block_diagonal", {"alpha_hat": a_hat, "uniform_alpha": uniform, "rotation_bits": bits},
        tuple(subs), build, subs[0].idle_ancillas,
    )


# ---------------------------------------------------------------------------
# state-preparation pairs, low rank, rank one


@dataclass(frozen=True)
class StatePrepPair:
    y: np.ndarray
    beta: float
    n: int
    eps1: float
    c: np.ndarray
    d: np.ndarray

    def products(self) -> np.ndarray:
        """beta * conj(c_j) * d_j, which reproduces y_j."""
        return self.beta * np.conj(self.c) * self.d


def make_prep_pair(y: Sequence[complex], n: Optional[int] = None) -> StatePrepPair:
    """Exact pair with |c_j| = |d_j| = sqrt(|y_j| / ||y||_1); phases ride on c."""
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("y must be a non-empty vector")
    beta = float(np.sum(np.abs(y)))
    if beta == 0:
        raise ValueError("cannot prepare the zero vector")
    if n is None:
        n = max(0, math.ceil(math.log2(len(y))))
    if len(y) > 1 << n:
        raise ValueError(f"{len(y)} coefficients do not fit in {n} qubits")
    mag = np.sqrt(np.abs(y) / beta)
    phase = np.exp(-1j * np.angle(y)) if np.iscomplexobj(y) or np.any(y < 0) else np.ones(len(y))
    c = np.zeros(1 << n, dtype=complex if np.iscomplexobj(phase) else float)
    d = np.zeros(1 << n)
    c[:len(y)] = phase * mag
    d[:len(y)] = mag
    if not np.iscomplexobj(y):
        c = c.real if np.allclose(np.imag(c), 0) else c
    eps1 = float(np.sum(np.abs(beta * np.conj(c[:len(y)]) * d[:len(y)] - y)))
    return StatePrepPair(y, beta, n, eps1, c, d)


def _householder_to(u: np.ndarray) -> np.ndarray:
    """Unitary whose first column is the unit vector u."""
    N = len(u)
    e0 = np.zeros(N, dtype=u.dtype)
    e0[0] = 1.0
    phase = u[0] / abs(u[0]) if abs(u[0]) > 1e-300 else 1.0
    w = u / phase - e0
    nw = np.linalg.norm(w)
    if nw < 1e-300:
        return phase * np.eye(N, dtype=np.result_type(u, complex if np.iscomplexobj(phase) else float))
    w = w / nw
    H = np.eye(N, dtype=np.result_type(u, float)) - 2.0 * np.outer(w, np.conj(w))
    # H e0 = u / phase; restore the phase on every column to keep it unitary
    return phase * H


def encode_low_rank(singulars: Sequence[complex], left: np.ndarray, right: np.ndarray,
                    prep: StatePrepPair) -> BlockEncoding:
    """(beta, n + s, eps1) encoding of sum_i sigma_i u_i v_i^H from unit vectors u_i, v_i."""
    sig = np.asarray(singulars)
    U = np.asarray(left)
    V = np.asarray(right)
    if U.ndim != 2 or U.shape != V.shape or U.shape[1] != len(sig):
        raise ValueError("left/right must be N x p matching the singular values")
    N, p = U.shape
    s = _check_pow2(N)
    for M in (U, V):
        norms = np.linalg.norm(M, axis=0)
        if np.any(np.abs(norms - 1) > 1e-10):
            raise ValueError("singular vectors must be normalized")
    if len(prep.y) != p:
        raise ValueError("prep pair must hold exactly one weight per rank-one term")
    w = np.conj(prep.c[:p]) * prep.d[:p]
    block = (U * w[None, :]) @ V.conj().T
    err = float(np.sum(np.abs(prep.beta * w - sig)))
    n = prep.n

    def build() -> Parts:
        # registers [term i][N (holds V_i^H |j>)][N (system)]
        D = (1 << n) * N * N
        rr, rc, rv, lr, lc, lv = [], [], [], [], [], []
        for i in range(p):
            Ui = _householder_to(U[:, i])
            Vi = _householder_to(V[:, i])
            x, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
            # R[(i, x, 0), j] = d_i (V_i^H)[x, j]
            rr.append(((i * N + x) * N).ravel())
            rc.append(j.ravel())
            rv.append((prep.d[i] * Vi.conj().T).ravel())
            # L[(i, 0, y), r] = c_i conj(U_i[r, y])
            y, r = x, j
            lr.append((i * N * N + y).ravel())
            lc.append(r.ravel())
            lv.append((prep.c[i] * np.conj(Ui.T)).ravel())
        for i in range(p, 1 << n):
            if prep.d[i] == 0 and prep.c[i] == 0:
                continue
            idx = np.arange(N)
            rr.append(i * N * N + idx * N)
            rc.append(idx)
            rv.append(np.full(N, prep.d[i]))
            lr.append(i * N * N + idx)
            lc.append(idx)
            lv.append(np.full(N, prep.c[i]))
        return _coo(lr, lc, lv, (D, N)), _coo(rr, rc, rv, (D, N))

    return BlockEncoding(
        prep.beta, n + s, err + FP_FLOOR * prep.beta, s, block,
        ResourceTally({"P_L": 1, "P_R": 1, "O_u": 1, "O_v": 1}, "O(polylog(N p / eps))", 0),
        "low_rank", {"rank": p, "beta": prep.beta}, (), build,
    )


def encode_rank1_oracle(u: Union[np.ndarray, Callable[[int], complex]],
                        v: Union[np.ndarray, Callable[[int], complex]],
                        u_hat: float, v_hat: float, n: Optional[int] = None,
                        bits: int = 48) -> BlockEncoding:
    """(2^s u_hat v_hat, s + 2b + 2, 0) encoding of u v^H from entry oracles for u and v.

    The two b-qubit value registers are uncomputed; they count as ancillas but
    are idle in the represented isometries.
    """
    if callable(u) or callable(v):
        if n is None:
            raise ValueError("callable oracles need the dimension n")
        uu = np.array([u(i) for i in range(n)]) if callable(u) else np.asarray(u)
        vv = np.array([v(j) for j in range(n)]) if callable(v) else np.asarray(v)
    else:
        uu, vv = np.asarray(u), np.asarray(v)
    N = len(uu)
    s = _check_pow2(N)
    if len(vv) != N:
        raise ValueError("u and v must have the same length")
    if np.max(np.abs(uu)) > u_hat * (1 + 1e-12) or np.max(np.abs(vv)) > v_hat * (1 + 1e-12):
        raise ValueError("entry bound u_hat or v_hat violated")
    au = uu / u_hat
    av = np.conj(vv) / v_hat
    block = np.outer(au, av) / N

    def build() -> Parts:
        # registers [row i][col j][u rotation][v rotation]
        i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        base = (i * N + j).ravel() * 4
        cu, cv = _complement(au)[i].ravel(), _complement(av)[j].ravel()
        a_u, a_v = au[i].ravel(), av[j].ravel()
        col = j.ravel()
        sc = 1 / math.sqrt(N)
        R = _coo([base, base + 1, base + 2, base + 3], [col] * 4,
                 [a_u * a_v * sc, a_u * cv * sc, cu * a_v * sc, cu * cv * sc], (4 * N * N, N))
        L = _coo([base], [i.ravel()], [np.full(N * N, sc)], (4 * N * N, N))
        return L, R

    alpha = N * u_hat * v_hat
    return BlockEncoding(
        alpha, s + 2 * bits + 2, FP_FLOOR * alpha, s, block,
        ResourceTally({"O_u": 2, "O_v": 2}, "O(s + polylog(b))", 0),
        "rank1_oracle", {"u_hat": u_hat, "v_hat": v_hat, "bits": bits}, (), build, 2 * bits,
    )


# ---------------------------------------------------------------------------
# composition


def pad_ancillas(enc: BlockEncoding, k: int) -> BlockEncoding:
    """Append k ancilla qubits that stay in |0>."""
    if k < 0:
        raise ValueError("cannot remove ancillas")
    if k == 0:
        return enc
    builder = enc.parts_builder
    new_builder = None
    if builder is not None:
        def new_builder() -> Parts:
            L, R = builder()
            shape = (L.shape[0] << k, L.shape[1])
            return (sp.csc_matrix((L.tocoo().data, (L.tocoo().row, L.tocoo().col)), shape=shape),
                    sp.csc_matrix((R.tocoo().data, (R.tocoo().row, R.tocoo().col)), shape=shape))
    return _replace(enc, ancillas=enc.ancillas + k, tag="pad", params={"added": k},
                    parents=(enc,), parts_builder=new_builder)


def attenuate(enc: BlockEncoding, factor: float) -> BlockEncoding:
    """Same operator at alpha * factor, using two extra rotation qubits."""
    if factor < 1:
        raise ValueError("attenuation factor must be >= 1")
    a = np.array([math.sqrt(1 / factor), math.sqrt(1 - 1 / factor)])
    e0 = np.array([1.0, 0.0])
    builder = None
    if enc.parts_builder is not None:
        def builder() -> Parts:
            L, R = enc.parts()
            return (sp.kron(L, np.kron(e0, a)[:, None], format="csc"),
                    sp.kron(R, np.kron(a, e0)[:, None], format="csc"))
    return _replace(enc, alpha=enc.alpha * factor, block=enc.block / factor, ancillas=enc.ancillas + 2,
                    parts_builder=builder, tag="attenuated", parents=(enc,),
                    params={"factor": factor})


def encode_identity(s: int, alpha: float = 1.0) -> BlockEncoding:
    N = 1 << s

    def build() -> Parts:
        I = sp.identity(N, format="csc")
        return I, I

    return BlockEncoding(alpha, 0, 0.0, s, np.eye(N), ResourceTally({}, "O(1)", 0), "identity",
                         {}, (), build)


def linear_combine(encodings: Sequence[BlockEncoding], prep: StatePrepPair,
                   prep_name: str = "P") -> BlockEncoding:
    """Encoding of sum_j y_j A_j.

    Equal input alphas combine exactly: (alpha beta, a+n, alpha eps1 + beta eps2).
    Unequal alphas are folded into the weights, y'_j = y_j alpha_j, and a new
    pair is prepared for y', giving (||y'||_1, a+n', eps1' + sum_j |y_j| eps_j).
    """
    if not encodings:
        raise ValueError("nothing to combine")
    m = len(encodings)
    if m > 1 << prep.n or len(prep.y) != m:
        raise ValueError("prep pair must hold one coefficient per encoding")
    s = encodings[0].s
    if any(e.s != s for e in encodings):
        raise ValueError("encodings act on different system sizes")
    a_max = max(e.ancillas for e in encodings)
    encs = [pad_ancillas(e, a_max - e.ancillas) for e in encodings]
    if any(e.idle_ancillas != encs[0].idle_ancillas for e in encs):
        raise ValueError("encodings disagree on idle ancillas")
    alphas = np.array([e.alpha for e in encs])
    if np.all(alphas == alphas[0]):
        pair = prep
        alpha = float(alphas[0]) * prep.beta
        eps2 = max(e.eps for e in encs)
        err = float(alphas[0]) * prep.eps1 + prep.beta * eps2
        lifted = False
    else:
        pair = make_prep_pair(prep.y * alphas, prep.n)
        alpha = pair.beta
        err = pair.eps1 + float(np.sum(np.abs(prep.y) * np.array([e.eps for e in encs])))
        lifted = True
    w = np.conj(pair.c[:m]) * pair.d[:m]
    dtype = np.result_type(w, *[e.block.dtype for e in encs])
    block = np.zeros((1 << s, 1 << s), dtype=dtype)
    for wj, e in zip(w, encs):
        block += wj * e.block
    D_sub = encs[0].register_dim
    n = pair.n

    def build() -> Parts:
        # registers [term j][sub-encoding]; unused terms act as identity blocks
        rr, rc, rv, lr, lc, lv = [], [], [], [], [], []
        N = 1 << s
        for j in range(1 << n):
            if pair.c[j] == 0 and pair.d[j] == 0:
                continue
            if j < m:
                parts = encs[j].parts()
                if parts is None:
                    raise ValueError("an input encoding has no isometry parts")
                Ls, Rs = (x.tocoo() for x in parts)
            else:
                Ls = Rs = sp.coo_matrix((np.ones(N), (np.arange(N), np.arange(N))), shape=(D_sub, N))
            rr.append(j * D_sub + Rs.row)
            rc.append(Rs.col)
            rv.append(pair.d[j] * Rs.data)
            lr.append(j * D_sub + Ls.row)
            lc.append(Ls.col)
            lv.append(pair.c[j] * Ls.data)
        shape = ((1 << n) * D_sub, 1 << s)
        return _coo(lr, lc, lv, shape), _coo(rr, rc, rv, shape)

    tally = tally_select([e.resources for e in encs], {f"{prep_name}_L": 1, f"{prep_name}_R": 1},
                         "O(sum of inputs + polylog)")
    return BlockEncoding(
        alpha, a_max + n, err, s, block, tally, "linear_combination",
        {"y": [complex(v) if np.iscomplexobj(prep.y) else float(v) for v in prep.y],
         "beta": pair.beta, "lifted": lifted},
        tuple(encodings), build, encs[0].idle_ancillas,
    )


def multiply(U: BlockEncoding, V: BlockEncoding) -> BlockEncoding:
    """(alpha beta, a + b, alpha eps_V + beta eps_U) encoding of A B."""
    if U.s != V.s:
        raise ValueError("cannot multiply encodings of different sizes")
    block = U.block @ V.block
    n = U.n

    def build() -> Parts:
        # witness: one-ancilla dilations of both factors, applied in sequence
        WU, WV = _dilation(U.block), _dilation(V.block)
        I2 = np.eye(2)
        # registers [system][anc U][anc V]
        big_u = np.kron(WU, I2)
        wv = WV.reshape(n, 2, n, 2)
        big_v = np.einsum("iajb,cd->icajdb", wv, I2).reshape(4 * n, 4 * n)
        W = big_u @ big_v
        cols = np.arange(n) * 4
        R = sp.csc_matrix(W[:, cols])
        L = sp.csc_matrix((np.ones(n), (cols, np.arange(n))), shape=(4 * n, n))
        return L, R

    return BlockEncoding(
        U.alpha * V.alpha, U.ancillas + V.ancillas, U.alpha * V.eps + V.alpha * U.eps, U.s, block,
        tally_sequence([U.resources, V.resources], "O(sum of inputs)"), "product", {},
        (U, V), build, U.idle_ancillas + V.idle_ancillas,
    )


# ---------------------------------------------------------------------------
# checks


def verify(enc: BlockEncoding, A: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]],
           probes: int = 32, seed: int = 0, check: bool = True) -> float:
    """||A - alpha B||: dense operator norm, or the worst of random probes for large or
    matvec-only targets. Raises when the residual exceeds the declared eps."""
    n = enc.n
    if callable(A) or n > DENSE_VERIFY_LIMIT:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(probes):
            x = rng.standard_normal(n)
            x /= np.linalg.norm(x)
            ax = A(x) if callable(A) else A @ x
            worst = max(worst, float(np.linalg.norm(ax - enc.matvec(x))))
        res = worst
    else:
        res = operator_norm(np.asarray(A) - enc.encoded())
    if check and res > enc.eps:
        raise AssertionError(f"residual {res:.3e} exceeds declared eps {enc.eps:.3e}")
    return res


DENSE_VERIFY_LIMIT = 2048


def isometry_defect(enc: BlockEncoding) -> float:
    """max |X^H X - I| over both parts, and the mismatch of L^H R against the block."""
    parts = enc.parts()
    if parts is None:
        raise ValueError(f"{enc.tag} encodings have no isometry parts")
    L, R = parts
    I = np.eye(enc.n)
    gram_r = (R.conj().T @ R).toarray()
    gram_l = (L.conj().T @ L).toarray()
    cross = (L.conj().T @ R).toarray()
    return float(max(np.abs(gram_r - I).max(), np.abs(gram_l - I).max(),
                     np.abs(cross - enc.block).max()))


def column_norm_defect(enc: BlockEncoding) -> float:
    parts = enc.parts()
    if parts is None:
        raise ValueError(f"{enc.tag} encodings have no isometry parts")
    L, R = parts
    nr = np.sqrt(np.asarray(abs(R.multiply(R.conj())).sum(axis=0))).ravel()
    nl = np.sqrt(np.asarray(abs(L.multiply(L.conj())).sum(axis=0))).ravel()
    return float(max(np.abs(nr - 1).max(), np.abs(nl - 1).max()))


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh((M + M.conj().T) / 2)
    return (Q * np.sqrt(np.clip(w, 0, None))) @ Q.conj().T


def _dilation(B: np.ndarray) -> np.ndarray:
    """Unitary on [system][one ancilla] whose ancilla-0 block is B (||B|| <= 1)."""
    n = B.shape[0]
    I = np.eye(n)
    top = np.hstack([B, _psd_sqrt(I - B @ B.conj().T)])
    bot = np.hstack([_psd_sqrt(I - B.conj().T @ B), -B.conj().T])
    W = np.vstack([top, bot])
    # reorder from [ancilla][system] to [system][ancilla]
    return W.reshape(2, n, 2, n).transpose(1, 0, 3, 2).reshape(2 * n, 2 * n)


def explicit_unitary(enc: BlockEncoding) -> np.ndarray:
    """A unitary on s + a qubits whose |0^a> block is the encoded block.

    Built as the dilation [[B, sqrt(I - B B^H)], [sqrt(I - B^H B), -B^H]] padded
    with the identity. Idle ancillas are left out of the witness.
    """
    qubits = enc.s + enc.ancillas - enc.idle_ancillas
    if qubits > UNITARY_QUBIT_CAP:
        raise ValueError(f"{qubits} qubits exceed the explicit-unitary cap of {UNITARY_QUBIT_CAP}")
    B = enc.block
    n = enc.n
    if operator_norm(B) > 1 + 1e-10:
        raise ValueError("block norm exceeds 1; not embeddable")
    D = 1 << qubits
    if enc.ancillas - enc.idle_ancillas == 0:
        U = B.astype(complex)
    else:
        top = np.hstack([B, _psd_sqrt(np.eye(n) - B @ B.conj().T)])
        bot = np.hstack([_psd_sqrt(np.eye(n) - B.conj().T @ B), -B.conj().T])
        U = np.eye(D, dtype=complex)
        U[:2 * n, :2 * n] = np.vstack([top, bot])
    defect = np.abs(U.conj().T @ U - np.eye(D)).max()
    if defect > 1e-10:
        raise AssertionError(f"dilation is not unitary (defect {defect:.2e})")
    return U
