"""Classical simulation of two state-preparation procedures.

Fourier preparation loads the d = 2p+1 coefficients of a smooth periodic
function into a uniform superposition, rotates by c_n / max|c|, post-selects
and applies the inverse-sign Fourier transform. Magnitude preparation groups
entries by |x_i| in (2^-(l+1), 2^-l], prepares the level weights, enumerates
each level with an index function and rotates by x_i / 2^-l.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .blockenc import ResourceTally
from .hierenc import level_sets, magnitude_level
from .linalg import ilog2, is_pow2

BETA2_MAX = 8.0


@dataclass(frozen=True)
class PrepResult:
    state: np.ndarray = field(repr=False)
    success_prob: float
    resources: ResourceTally
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if abs(np.linalg.norm(self.state) - 1.0) > 1e-12:
            raise AssertionError("prepared state is not normalized")
        if not 0.0 < self.success_prob <= 1.0 + 1e-12:
            raise AssertionError("success probability outside (0, 1]")


Coeffs = Union[Mapping[int, complex], Sequence[complex]]


def _coeff_map(coeffs: Coeffs) -> dict[int, complex]:
    if isinstance(coeffs, Mapping):
        return {int(k): complex(v) for k, v in coeffs.items()}
    arr = list(coeffs)
    if len(arr) % 2 != 1:
        raise ValueError("coefficient list must have odd length 2p+1, ordered -p..p")
    p = len(arr) // 2
    return {n - p: complex(v) for n, v in enumerate(arr)}


def fourier_series(coeffs: Coeffs, x: np.ndarray) -> np.ndarray:
    """g(x) = sum_n c_n e^{i n x}."""
    cm = _coeff_map(coeffs)
    x = np.asarray(x, dtype=float)
    return sum(c * np.exp(1j * n * x) for n, c in cm.items())


def _wrapped(cm: Mapping[int, complex], N: int) -> np.ndarray:
    g = np.zeros(N, dtype=complex)
    for n, c in cm.items():
        g[n % N] += c
    return g


def prep_smooth_fourier(coeffs: Coeffs, N: int) -> PrepResult:
    """Prepare the state proportional to (g(2 pi j / N))_j from its Fourier coefficients."""
    if not is_pow2(N):
        raise ValueError("N must be a power of two")
    cm = _coeff_map(coeffs)
    p = max(abs(n) for n in cm)
    d = 2 * p + 1
    if d > N:
        raise ValueError(f"{d} Fourier slots do not fit in N = {N}")
    c_hat = max(abs(c) for c in cm.values())
    if c_hat == 0:
        raise ValueError("all coefficients are zero")
    # uniform superposition over d slots, rotate by c/c_hat, keep the |0> branch
    amp = {n: c / (c_hat * math.sqrt(d)) for n, c in cm.items()}
    g = _wrapped(amp, N)
    success = float(np.sum(np.abs(g) ** 2))
    # F_{jk} = e^{2 pi i j k / N} / sqrt(N)
    state = np.fft.ifft(g) * math.sqrt(N) / math.sqrt(success)
    analytic = sum(abs(c / c_hat) ** 2 for c in cm.values()) / d
    return PrepResult(
        state, success,
        ResourceTally({"P_uniform": 1, "R_coeff": 1, "QFT": 1}, "O(log^2 N + d)", 0),
        {"d": d, "c_hat": c_hat, "analytic_success": analytic},
    )


def fourier_coefficients(state: np.ndarray, p: int) -> dict[int, complex]:
    """Inverse of the preparation: normalized coefficients c_n, |n| <= p."""
    N = len(state)
    g = np.fft.fft(state) / math.sqrt(N)
    return {n: complex(g[n % N]) for n in range(-p, p + 1)}


IndexFn = Callable[[int, int], int]


def sorted_index_fn(x: np.ndarray) -> IndexFn:
    """f(l, k): k-th smallest index of level l (zeros fall in the last level)."""
    N = len(x)
    L = ilog2(N)
    sets = level_sets(np.asarray(x)[:, None], L, include_zeros=True)[0]

    def f(lv: int, k: int) -> int:
        return int(sets[lv][k])

    return f


def beta_squared(x: np.ndarray) -> float:
    N = len(x)
    L = ilog2(N)
    lv = magnitude_level(np.asarray(x), L)
    counts = np.bincount(lv, minlength=L)
    return float(np.sum(counts * 4.0 ** -np.arange(L)))


def prep_magnitude_hier(x: np.ndarray, index_fn: Optional[IndexFn] = None) -> PrepResult:
    """Prepare x exactly; the level-weight step is a uniform L-way superposition
    followed by a rotation, so the success probability is 1 / (L beta^2)."""
    x = np.asarray(x)
    N = len(x)
    if N < 2 or not is_pow2(N):
        raise ValueError("length must be a power of two >= 2")
    if abs(np.linalg.norm(x) - 1.0) > 1e-10:
        raise ValueError("input vector must have unit norm")
    L = ilog2(N)
    sets = level_sets(x[:, None], L, include_zeros=True)[0]
    f = index_fn if index_fn is not None else sorted_index_fn(x)
    counts = np.array([len(s) for s in sets])
    seen: set[int] = set()
    for lv in range(L):
        got = [f(lv, k) for k in range(counts[lv])]
        if len(set(got)) != len(got) or seen.intersection(got):
            raise ValueError(f"index function collides at level {lv}")
        if sorted(got) != sets[lv].tolist():
            raise ValueError(f"index function does not enumerate level {lv}")
        seen.update(got)
    beta2 = float(np.sum(counts * 4.0 ** -np.arange(L)))
    beta = math.sqrt(beta2)
    out = np.zeros(N, dtype=x.dtype if np.iscomplexobj(x) else float)
    for lv in range(L):
        if counts[lv] == 0:
            continue
        weight = (1 / math.sqrt(L)) * math.sqrt(counts[lv]) * 2.0**-lv / beta
        for k in range(counts[lv]):
            i = f(lv, k)
            out[i] += weight / math.sqrt(counts[lv]) * (x[i] / 2.0**-lv)
    success = float(np.sum(np.abs(out) ** 2))
    if beta2 > BETA2_MAX + 1e-12:
        raise AssertionError(f"beta^2 = {beta2} exceeds 8")
    if success < 1 / (BETA2_MAX * L) - 1e-15:
        raise AssertionError("success probability below 1 / (8 log2 N)")
    return PrepResult(
        out / math.sqrt(success), success,
        ResourceTally({"P_level": 1, "O_index": 1, "O_x": 1}, "O(polylog N)", 0),
        {"beta2": beta2, "levels": L, "counts": counts.tolist(), "analytic_success": 1 / (L * beta2)},
    )
