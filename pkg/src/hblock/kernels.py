"""Kernel functions with decay metadata, point sets, and the classical entry oracle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

from .linalg import check_dense


class Family(str, Enum):
    POLY = "PolyDecay"
    GENPOLY = "GeneralizedPolyDecay"
    EXP = "ExpDecay"
    LOG = "Log"
    MULTIQUADRIC = "Multiquadric"
    POLYHARMONIC = "Polyharmonic"
    COLLOCATION = "Collocation"
    CUSTOM = "Custom"


DECAY_FAMILIES = (Family.POLY, Family.GENPOLY, Family.EXP)

MODULATORS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "one": np.ones_like,
    "cos": np.cos,
    "sin": np.sin,
    "sign_alternating": lambda r: np.cos(np.pi * np.rint(r)),
}


def exp_t(q: float, k: float) -> int:
    """Smallest non-negative integer t with q*t - k > 1."""
    if q <= 0:
        raise ValueError("ExpDecay needs q > 0")
    t = max(0, math.floor(k / q) + math.ceil(1 / q))
    while t > 0 and q * (t - 1) - k > 1:
        t -= 1
    while q * t - k <= 1:
        t += 1
    return t


@dataclass(frozen=True)
class Kernel:
    """Pairwise kernel k(x, x') described by its family and decay parameters.

    Distances are Euclidean, ``r = |x - x'|``. Off the diagonal the value is
    the family's radial function; on the diagonal it is the self-interaction
    ``C``. PolyDecay with a nonzero ``c`` is the skew-shifted kernel
    ``||x - x'| - c|^(-p)`` whose singular band sits at ``|x - x'| = c``.
    """

    family: Family
    p: float = 1.0
    C: float = 0.0
    q: float = 1.0
    k: float = 0.0
    c: float = 0.0
    lam: float = 1.0
    domain_scale: float = 1.0
    bound: float = 1.0
    G: Optional[str] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    taylor: Optional[Callable[[np.ndarray, float, int], np.ndarray]] = field(
        default=None, compare=False
    )
    decay: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if self.family in DECAY_FAMILIES and abs(self.C) > 1:
            raise ValueError("decay kernels need |C| <= 1")
        if self.family == Family.CUSTOM and self.func is None:
            raise ValueError("Custom kernels need a callable func")
        if self.G is not None and self.G not in MODULATORS:
            raise ValueError(f"unknown modulator {self.G!r}")

    # constructors -------------------------------------------------------
    @classmethod
    def poly(cls, p: float, C: float = 0.0, **kw: Any) -> "Kernel":
        return cls(Family.POLY, p=p, C=C, **kw)

    @classmethod
    def expdecay(cls, q: float, k: float = 0.0, C: float = 0.0, **kw: Any) -> "Kernel":
        return cls(Family.EXP, q=q, k=k, C=C, **kw)

    @classmethod
    def constant(cls, value: float = 1.0) -> "Kernel":
        def taylor(x: np.ndarray, c: float, q: int) -> np.ndarray:
            return np.full(np.shape(x), float(value) if q == 0 else 0.0)

        return cls(
            Family.CUSTOM,
            C=value,
            func=lambda r: np.full(np.shape(r), float(value)),
            taylor=taylor,
        )

    # evaluation ---------------------------------------------------------
    @property
    def value_scale(self) -> float:
        """Magnitude scale used for fixed-point quantization."""
        if self.family == Family.COLLOCATION:
            return self.lam**2
        return 1.0

    @property
    def exp_t(self) -> int:
        return exp_t(self.q, self.k)

    def radial(self, r: np.ndarray, n: int | None = None) -> np.ndarray:
        """Off-diagonal values for r > 0."""
        r = np.asarray(r, dtype=float)
        fam = self.family
        with np.errstate(divide="ignore", invalid="ignore"):
            if fam == Family.POLY:
                return np.abs(r - self.c) ** (-self.p)
            if fam == Family.GENPOLY:
                g = MODULATORS[self.G or "one"](r)
                return self.bound * g * r ** (-self.p)
            if fam == Family.EXP:
                return np.exp(-(r**self.q)) * r**self.k
            if fam == Family.LOG:
                return np.log(r)
            if fam == Family.MULTIQUADRIC:
                return np.sqrt(self.c**2 + r**2)
            if fam == Family.POLYHARMONIC:
                return r**self.p * np.log(r)
            if fam == Family.COLLOCATION:
                if n is None:
                    raise ValueError("Collocation kernel needs the panel count n")
                d = r / self.domain_scale
                return self.lam**2 / (n * (2.0 * np.sin(np.pi * d / n)) ** self.p)
            return np.asarray(self.func(r), dtype=float)  # Custom

    def diagonal_value(self) -> float:
        if self.family == Family.MULTIQUADRIC:
            return abs(self.c)
        if self.family == Family.POLYHARMONIC:
            return 0.0
        return float(self.C)

    def values(self, r: np.ndarray, n: int | None = None) -> np.ndarray:
        """Kernel values for a distance array, diagonal handled by ``C``."""
        r = np.asarray(r, dtype=float)
        singular = r == 0.0
        if self.family == Family.POLY and self.c != 0.0:
            singular = np.abs(r - self.c) == 0.0
        out = np.empty_like(r)
        mask = ~singular
        out[mask] = self.radial(r[mask], n)
        out[singular] = self.diagonal_value()
        return out

    @property
    def has_decay_class(self) -> bool:
        if self.family == Family.CUSTOM:
            return self.decay in ("poly", "exp")
        return self.family in DECAY_FAMILIES or self.family == Family.COLLOCATION

    # serialization ------------------------------------------------------
    def to_json(self) -> dict[str, Any]:
        if self.family == Family.CUSTOM:
            raise ValueError("Custom kernels are not serializable")
        return {
            "family": self.family.value,
            "p": self.p,
            "C": self.C,
            "q": self.q,
            "k": self.k,
            "c": self.c,
            "lambda": self.lam,
            "domain_scale": self.domain_scale,
            "bound": self.bound,
            "G": self.G,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any] | str) -> "Kernel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        obj = dict(obj)
        known = {"family", "p", "C", "q", "k", "c", "lambda", "lam", "domain_scale", "bound", "G"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown kernel fields: {sorted(extra)}")
        if "family" not in obj:
            raise ValueError("kernel spec needs a 'family' field")
        fam = Family(obj.pop("family"))
        if fam == Family.CUSTOM:
            raise ValueError("Custom kernels cannot be parsed from JSON")
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        return cls(fam, **{k: v for k, v in obj.items() if v is not None or k == "G"})


def kernel_for_gaussian() -> Kernel:
    """Gaussian exp(-r^2) with its natural self-interaction k(0) = 1."""
    return Kernel.expdecay(q=2.0, k=0.0, C=1.0)


# ----------------------------------------------------------------------------
# 2D site numbering: base-4 digits f(i_l, j_l), most significant bit first.
_F = {(0, 0): 0, (0, 1): 1, (1, 0): 3, (1, 1): 2}


def grid_number(i: int, j: int, L: int) -> int:
    """Index m(i, j) of grid site (i, j) on a 2^L x 2^L grid."""
    m = 0
    for level in range(1, L + 1):
        bit = L - level
        m = 4 * m + _F[((i >> bit) & 1, (j >> bit) & 1)]
    return m


def grid_numbering(L: int) -> np.ndarray:
    """Array ``sites[m] = (i, j)`` inverting :func:`grid_number`."""
    side = 1 << L
    sites = np.empty((side * side, 2), dtype=np.int64)
    for i in range(side):
        for j in range(side):
            sites[grid_number(i, j, L)] = (i, j)
    return sites


@dataclass(frozen=True)
class PointSet:
    """Particle coordinates, optional masses, and an optional period (1D)."""

    coords: np.ndarray
    masses: Optional[np.ndarray] = None
    period: Optional[float] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.coords, dtype=float)
        if x.ndim == 1:
            if x.size > 1 and np.any(np.diff(x) <= 0):
                raise ValueError("1D coordinates must be strictly increasing")
        elif x.ndim == 2 and x.shape[1] == 2:
            if len({tuple(row) for row in x}) != len(x):
                raise ValueError("2D coordinates must be pairwise distinct")
        else:
            raise ValueError("coords must have shape (N,) or (N, 2)")
        object.__setattr__(self, "coords", x)
        if self.masses is not None:
            m = np.asarray(self.masses, dtype=float)
            if m.shape != (len(x),):
                raise ValueError("masses must match the number of points")
            object.__setattr__(self, "masses", m)

    @property
    def dim(self) -> int:
        return 1 if self.coords.ndim == 1 else 2

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def L(self) -> int:
        """Tree depth: ceil(log2 N) in 1D, ceil(log4 N) in 2D."""
        if self.n <= 1:
            return 0
        depth = math.ceil(math.log2(self.n))
        return depth if self.dim == 1 else math.ceil(depth / 2)

    @classmethod
    def grid(cls, n: int, scale: float = 1.0, periodic: bool = False,
             masses: Optional[np.ndarray] = None) -> "PointSet":
        return cls(np.arange(n) * float(scale), masses, n * float(scale) if periodic else None)

    @classmethod
    def grid2d(cls, side: int, scale: float = 1.0) -> "PointSet":
        L = int(round(math.log2(side)))
        if 1 << L != side:
            raise ValueError("2D grid side must be a power of two")
        return cls(grid_numbering(L).astype(float) * scale)

    def with_masses(self, masses: np.ndarray) -> "PointSet":
        return replace(self, masses=np.asarray(masses, dtype=float))


def _quantize(values: np.ndarray, bits: int, scale: float) -> np.ndarray:
    step = scale * 2.0 ** (-bits)
    return np.round(values / step) * step


@dataclass(frozen=True)
class EntryOracle:
    """Classical stand-in for the entry oracle: b-bit fixed-point kernel values.

    ``col_shift`` relabels columns cyclically, j -> (j - c) mod N, which is how
    the horizontally shifted hierarchy reads its kernel.
    """

    kernel: Kernel
    points: PointSet
    precision_bits: int = 48
    name: str = "O_k"
    col_shift: int = 0

    @property
    def n(self) -> int:
        return self.points.n

    @property
    def scale(self) -> float:
        return self.kernel.value_scale

    def _distances(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        x = self.points.coords
        cols = (np.asarray(cols) - self.col_shift) % self.n
        xr, xc = x[np.asarray(rows)], x[cols]
        if self.points.dim == 1:
            d = np.abs(xr[:, None] - xc[None, :])
            if self.points.period is not None:
                d = np.minimum(d, self.points.period - d)
            return d
        diff = xr[:, None, :] - xc[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def exact_block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        return self.kernel.values(self._distances(rows, cols), self.n)

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return _quantize(self.exact_block(rows, cols), self.precision_bits, self.scale)

    def _check(self, i: int, j: int) -> None:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"entry ({i}, {j}) outside 0..{self.n - 1}")

    def eval(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.block([i], [j])[0, 0])

    def exact(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.exact_block([i], [j])[0, 0])

    def matrix(self) -> np.ndarray:
        check_dense(self.n)
        idx = np.arange(self.n)
        return self.block(idx, idx)


@dataclass(frozen=True)
class ArrayOracle:
    """Entry oracle over an explicit matrix; ``kernel`` is optional metadata."""

    A: np.ndarray
    precision_bits: int = 48
    name: str = "O_A"
    kernel: Optional[Kernel] = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        A = np.asarray(self.A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("ArrayOracle needs a square matrix")
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def exact_block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return self.A[np.ix_(np.atleast_1d(rows), np.atleast_1d(cols))]

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        vals = self.exact_block(rows, cols)
        if np.iscomplexobj(vals):
            return _quantize(vals.real, self.precision_bits, self.scale) + 1j * _quantize(
                vals.imag, self.precision_bits, self.scale
            )
        return _quantize(vals, self.precision_bits, self.scale)

    def eval(self, i: int, j: int) -> complex | float:
        return self.block([i], [j])[0, 0]

    def matrix(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self.block(idx, idx)


def eval_kernel(oracle: EntryOracle, i: int, j: int) -> float:
    return oracle.eval(i, j)


def assemble_dense(oracle: EntryOracle | ArrayOracle) -> np.ndarray:
    """Full N x N matrix of quantized oracle values."""
    return oracle.matrix()


def level_max_entry(kernel: Kernel, level: int, L: int, n: int | None = None) -> float:
    """Entry bound on admissible blocks of ``level``: their separation is >= 2^(L-level)."""
    if level < 2:
        raise ValueError("no admissible blocks at levels below 2")
    if level > L:
        raise ValueError("level exceeds tree depth")
    d = kernel.domain_scale * 2.0 ** (L - level)
    fam = kernel.family
    if fam == Family.POLY:
        return d ** (-kernel.p)
    if fam == Family.GENPOLY:
        return kernel.bound * d ** (-kernel.p)
    if fam == Family.EXP:
        t = kernel.exp_t
        return math.factorial(t) * d ** (-(kernel.q * t - kernel.k))
    if fam == Family.COLLOCATION:
        if n is None:
            raise ValueError("Collocation bound needs the panel count n")
        return float(kernel.radial(np.array([d]), n)[0])
    if fam == Family.CUSTOM and kernel.decay == "poly":
        return kernel.bound * d ** (-kernel.p)
    if fam == Family.CUSTOM and kernel.decay == "exp":
        t = kernel.exp_t
        return kernel.bound * math.factorial(t) * d ** (-(kernel.q * t - kernel.k))
    raise ValueError(f"{fam.value} kernels have no level entry bound")
