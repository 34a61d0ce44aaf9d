"""End-to-end studies: fast multipole potentials, the collocation system on a
thin ring, query-count tables, condition numbers and singular spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
from scipy.optimize import curve_fit

from .blockenc import BlockEncoding, encode_identity, linear_combine, make_prep_pair
from .hierenc import encode_hierarchical, normalization_factor, plan_hierarchical
from .hsplit import HSplit, adaptive_mesh, hierarchical_split
from .kernels import EntryOracle, Family, Kernel, PointSet
from .linalg import check_dense, ilog2, is_pow2, operator_norm

NEAR_SUBPANELS = 8
FIT_MIN_N = 16


# ---------------------------------------------------------------------------
# fast multipole potentials


@dataclass(frozen=True)
class QFMMResult:
    potential: np.ndarray = field(repr=False)
    state: np.ndarray = field(repr=False)
    success_prob: float
    queries: Mapping[str, int]
    alpha: float
    mesh_sites: Optional[np.ndarray] = field(default=None, repr=False)


def qfmm_potential(points: PointSet, eps: float = 0.0, p: float = 1.0) -> QFMMResult:
    """Potential Phi_i = sum_{j != i} m_j |x_i - x_j|^-p through the hierarchical encoding.

    Points that are not an integer grid of power-of-two size are placed on a
    uniform mesh of spacing equal to their smallest gap; empty sites carry zero mass.
    """
    if points.dim != 1:
        raise ValueError("the potential study is one-dimensional")
    m = points.masses if points.masses is not None else np.ones(points.n)
    if abs(float(np.sum(m))) == 0.0 or not np.any(m):
        raise ValueError("total mass is zero")
    x = points.coords
    on_grid = is_pow2(points.n) and np.array_equal(x, np.arange(points.n, dtype=float))
    sites = None
    if on_grid:
        grid, spacing = PointSet(x, m), 1.0
    else:
        gap = float(np.min(np.diff(x))) if points.n > 1 else 1.0
        mesh = adaptive_mesh(PointSet(x, m), gap, pad_pow2=True)
        grid, spacing, sites = mesh.points, mesh.spacing, mesh.sites
    n = grid.n
    if n < 4:
        # no admissible blocks: the direct sum is the encoding
        K = EntryOracle(Kernel.poly(p), grid).matrix() * spacing**-p
        alpha = n * float(np.max(np.abs(K))) if np.any(K) else 1.0
        phi = K @ grid.masses
        queries: Mapping[str, int] = {"O_k": 2}
    else:
        oracle = EntryOracle(Kernel.poly(p), grid)
        enc = encode_hierarchical(oracle, hierarchical_split(grid, "Plain1D"), eps=eps)
        alpha = enc.alpha * spacing**-p
        phi = enc.matvec(grid.masses) * spacing**-p
        queries = dict(enc.resources.oracle_queries)
    mnorm = float(np.linalg.norm(grid.masses))
    success = float(np.linalg.norm(phi) ** 2 / (alpha * mnorm) ** 2)
    pot = phi if sites is None else phi[sites]
    return QFMMResult(pot, phi / np.linalg.norm(phi), success, queries, alpha, sites)


def direct_potential(points: PointSet, p: float = 1.0) -> np.ndarray:
    """O(N^2) reference sum."""
    x = points.coords
    m = points.masses if points.masses is not None else np.ones(points.n)
    out = np.zeros(points.n)
    for i in range(points.n):
        d = np.abs(x[i] - x)
        d[i] = np.inf
        out[i] = np.sum(m / d**p)
    return out


# ---------------------------------------------------------------------------
# collocation on a thin ring


def _chord(theta: np.ndarray) -> np.ndarray:
    return 2.0 * np.abs(np.sin(theta / 2.0))


def near_entry(offset: int, N: int, p: float, lam: float, subpanels: int = NEAR_SUBPANELS) -> float:
    """Panel integral for a nearby panel: midpoint rule on ``subpanels`` pieces of panel j.

    Every panel carries weight lam^2 / N; the centroid of panel i sits at angle 0.
    """
    h = 2.0 * math.pi / N
    start = offset * h - h / 2
    mids = start + (np.arange(subpanels) + 0.5) * h / subpanels
    return float(np.sum(lam**2 / (N * subpanels) / _chord(mids) ** p))


def collocation_entry(offset: int, N: int, p: float, lam: float) -> float:
    """Far-field entry lam^2 / (N (2 sin(pi |i-j| / N))^p)."""
    return lam**2 / (N * (2.0 * math.sin(math.pi * abs(offset) / N)) ** p)


@dataclass(frozen=True)
class CollocationOracle(EntryOracle):
    """Collocation entries with quadrature values for index offsets below len(near)."""

    near: tuple[float, ...] = ()

    def exact_block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        out = super().exact_block(rows, cols)
        n = self.n
        off = np.abs(rows[:, None] - cols[None, :]) % n
        off = np.minimum(off, n - off)
        for k, v in enumerate(self.near):
            out = np.where(off == k, v, out)
        return out


@dataclass(frozen=True)
class CollocationSystem:
    N: int
    p: float
    lam: float
    oracle: CollocationOracle
    split: HSplit
    K: Optional[np.ndarray] = field(repr=False)
    norm_K: Optional[float]
    kappa_bound: Optional[float]
    kappa_defined: bool

    @property
    def A(self) -> np.ndarray:
        if self.K is None:
            raise ValueError("N above the dense cap")
        return np.eye(self.N) + self.K


def collocation_system(N: int, p: float = 1.0, lam: Optional[float] = None, dense: Optional[bool] = None) -> CollocationSystem:
    """I + K for piecewise-constant panels on a ring with strip height lam (default 1/N)."""
    if not 0 < p <= 2:
        raise ValueError("need 0 < p <= 2")
    if not is_pow2(N) or N < 4:
        raise ValueError("N must be a power of two >= 4")
    lam = 1.0 / N if lam is None else float(lam)
    diag = near_entry(0, N, p, lam)
    kernel = Kernel(Family.COLLOCATION, p=p, lam=lam, C=diag)
    pts = PointSet.grid(N, periodic=True)
    oracle = CollocationOracle(kernel, pts, near=(diag, near_entry(1, N, p, lam)))
    split = hierarchical_split(pts, "Cyclic")
    dense = N <= 2048 if dense is None else dense
    K = norm = bound = None
    defined = False
    if dense:
        check_dense(N)
        K = oracle.matrix()
        norm = operator_norm(K)
        defined = norm < 1
        bound = (1 + norm) / (1 - norm) if defined else None
    return CollocationSystem(N, p, lam, oracle, split, K, norm, bound, defined)


def collocation_alpha(system: CollocationSystem) -> float:
    """Normalization of the cyclic hierarchical encoding of K."""
    return plan_hierarchical(system.oracle, system.split).alpha


def encode_collocation(system: CollocationSystem, eps: float = 0.0) -> BlockEncoding:
    """Encoding of I + K with alpha = 1 + alpha_K."""
    enc_k = encode_hierarchical(system.oracle, system.split, eps=eps)
    ident = encode_identity(enc_k.s)
    return linear_combine([ident, enc_k], make_prep_pair(np.ones(2)), prep_name="P_sum")


def construction_tally(N: int, eps: float = 1e-6) -> dict:
    """Size of the encoding's circuit description for the cyclic collocation system.

    One naive-block template per level (shared by all blocks of that level
    through index arithmetic), one adjacent template, one level-weight prep and
    the identity term. ``gate_estimate`` charges O(log N + rotation bits) per template.
    """
    L = ilog2(N)
    levels = max(0, L - 1)
    components = levels + 3
    r = max(1, math.ceil(math.log2(3 * L / eps)))
    return {"N": N, "components": components, "gate_estimate": components * (L + r)}


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray = field(repr=False)
    residual: float
    iterations: int


def solve_reference(A: np.ndarray, b: np.ndarray, max_refine: int = 5, tol: float = 1e-14) -> SolveResult:
    """Dense LU solve with iterative refinement; residuals in extended precision."""
    A = np.asarray(A)
    b = np.asarray(b)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    check_dense(n)
    rcond = 1.0 / np.linalg.cond(A, 1)
    if not np.isfinite(rcond) or rcond < np.finfo(float).eps:
        raise ValueError("matrix is singular to working precision")
    lu = sla.lu_factor(A)
    x = sla.lu_solve(lu, b)
    Ae = A.astype(np.longdouble) if not np.iscomplexobj(A) else A
    be = b.astype(np.longdouble) if not np.iscomplexobj(b) else b
    bnorm = float(np.linalg.norm(b)) or 1.0
    it = 0
    for it in range(1, max_refine + 1):
        r = (be - Ae @ x).astype(A.dtype if not np.iscomplexobj(b) else complex)
        if np.linalg.norm(r) / bnorm <= tol:
            break
        x = x + sla.lu_solve(lu, r)
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    return SolveResult(x, res, it)


# ---------------------------------------------------------------------------
# query counts


def query_complexity(alpha: Union[float, BlockEncoding], A_norm: float, kappa: float, eps: float,
                     mode: str = "forward") -> float:
    """Query units with unit constants: (alpha/||A||) kappa, times ln(1/eps) for inversion."""
    a = alpha.alpha if isinstance(alpha, BlockEncoding) else float(alpha)
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    base = a / A_norm * kappa
    if mode == "forward":
        return base
    if mode == "inverse":
        return base * math.log(1 / eps)
    raise ValueError("mode must be 'forward' or 'inverse'")


def filtered_inversion_units(zeta: float, eps: float, inv_b_norm: float) -> float:
    """(ln(1/zeta) + ln(1/eps)) / (zeta ||A^-1 b||); documented formula, not asserted."""
    return (math.log(1 / zeta) + math.log(1 / eps)) / (zeta * inv_b_norm)


def complexity_table(kernel: Kernel, Ns: Sequence[int], kappa: float = 10.0, eps: float = 1e-3) -> tuple[list[dict], dict]:
    """Rows (method, N, alpha, norm, kappa, forward_units, inverse_units) and fitted exponents.

    hierarchical: closed-form alpha; naive: N max|K|; qram: Frobenius norm.
    """
    rows = []
    for N in Ns:
        K = EntryOracle(kernel, PointSet.grid(N)).matrix()
        norm = operator_norm(K)
        alphas = {
            "hierarchical": normalization_factor(kernel, N),
            "naive": N * float(np.max(np.abs(K))),
            "qram": float(np.linalg.norm(K)),
        }
        for method, a in alphas.items():
            rows.append({"method": method, "N": N, "alpha": a, "norm": norm, "kappa": kappa,
                         "forward_units": query_complexity(a, norm, kappa, eps, "forward"),
                         "inverse_units": query_complexity(a, norm, kappa, eps, "inverse")})
    exps = {}
    for method in ("hierarchical", "naive", "qram"):
        sel = [r for r in rows if r["method"] == method and r["N"] >= FIT_MIN_N]
        if len(sel) > 1:
            exps[method] = loglog_slope([r["N"] for r in sel], [r["inverse_units"] for r in sel])
    return rows, exps


# ---------------------------------------------------------------------------
# condition numbers and spectra


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def aic(rss: float, n: int, k: int) -> float:
    return n * math.log(max(rss, 1e-300) / n) + 2 * k


def compare_log_power(Ns: Sequence[float], values: Sequence[float]) -> dict:
    """AIC of kappa = c1 + c2 ln N against kappa = a N^b (both two parameters)."""
    x = np.asarray(Ns, float)
    y = np.asarray(values, float)
    X = np.stack([np.ones_like(x), np.log(x)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss_log = float(np.sum((X @ coef - y) ** 2))
    b0 = loglog_slope(x, y)
    a0 = float(np.exp(np.mean(np.log(y) - b0 * np.log(x))))
    (a, b), _ = curve_fit(lambda t, a, b: a * t**b, x, y, p0=(a0, b0), maxfev=20000)
    rss_pow = float(np.sum((a * x**b - y) ** 2))
    n = len(x)
    return {"aic_log": aic(rss_log, n, 2), "aic_power": aic(rss_pow, n, 2),
            "log_coef": coef.tolist(), "power_coef": [float(a), float(b)]}


def kernel_matrix(kernel: Kernel, N: int, diag: Optional[float] = None, scale: float = 1.0) -> np.ndarray:
    check_dense(N)
    K = EntryOracle(kernel, PointSet.grid(N, scale=scale)).matrix()
    if diag is not None:
        np.fill_diagonal(K, diag)
    return K


@dataclass(frozen=True)
class ConditionStudy:
    rows: list[dict]
    slopes: dict
    aic: dict


def condition_study(kernels: Mapping[str, Kernel], Ns: Sequence[int], diag_value: Optional[float] = None) -> ConditionStudy:
    """kappa(N) for each kernel via dense SVD, with an optional diagonal override."""
    rows = []
    for name, kernel in kernels.items():
        for N in Ns:
            s = np.linalg.svd(kernel_matrix(kernel, N, diag_value), compute_uv=False)
            kappa = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
            rows.append({"kernel": name, "N": N, "kappa": kappa})
    slopes, aics = {}, {}
    for name in kernels:
        sel = [r for r in rows if r["kernel"] == name and r["N"] >= FIT_MIN_N and np.isfinite(r["kappa"])]
        if len(sel) > 2:
            xs, ys = [r["N"] for r in sel], [r["kappa"] for r in sel]
            slopes[name] = loglog_slope(xs, ys)
            slopes[name + ":tail"] = loglog_slope(xs[-3:], ys[-3:])
            aics[name] = compare_log_power(xs, ys)
    return ConditionStudy(rows, slopes, aics)


@dataclass(frozen=True)
class Spectrum:
    sigma: np.ndarray = field(repr=False)
    rank: int
    overlap: float


def singular_spectrum(kernel: Kernel, N: int, scale: float = 1.0, threshold: float = 1e-10) -> Spectrum:
    """Sorted singular values, numerical rank and <v1, uniform>^2."""
    K = kernel_matrix(kernel, N, scale=scale)
    U, s, _ = np.linalg.svd(K)
    rank = int(np.count_nonzero(s > threshold * s[0])) if s[0] > 0 else 0
    u = np.full(N, 1 / math.sqrt(N))
    return Spectrum(s, rank, float(abs(np.vdot(U[:, 0], u)) ** 2))


def spectrum_rows(name: str, spec: Spectrum, N: int) -> Iterable[dict]:
    for k, sk in enumerate(spec.sigma):
        yield {"kernel": name, "N": N, "k": k, "sigma_k": float(sk)}
