"""Independent reference implementations used to derive expected values.

Written with plain loops and direct formulas; nothing here imports hblock.
"""
from __future__ import annotations

import math

import numpy as np


def poly_kernel(N: int, p: float, C: float = 0.0, x=None) -> np.ndarray:
    x = np.arange(N, dtype=float) if x is None else np.asarray(x, float)
    K = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            K[i, j] = C if i == j else abs(x[i] - x[j]) ** (-p)
    return K


def alpha_1d(N: int, p: float) -> float:
    """Adjacent 3 * 1 plus, per level l, 3 * (block size) * (block size)^-p."""
    L = int(round(math.log2(N)))
    total = 3.0
    for level in range(2, L + 1):
        m = 2 ** (L - level)
        total += 3.0 * m * float(m) ** (-p)
    return total


def alpha_2d(side: int, p: float) -> float:
    L = int(round(math.log2(side)))
    total = 9.0
    for level in range(2, L + 1):
        m = 2 ** (L - level)
        total += 27.0 * m * m * float(m) ** (-p)
    return total


def alpha_exp(N: int, q: float, k: float) -> float:
    t = 1
    while q * t - k <= 1:
        t += 1
    L = int(round(math.log2(N)))
    total = 3.0
    for level in range(2, L + 1):
        m = 2 ** (L - level)
        total += 3.0 * m * math.factorial(t) * float(m) ** (-(q * t - k))
    return total


def level_of_pair_1d(i: int, j: int, L: int, cyclic: bool = False) -> int:
    """Coarsest level at which the clusters of i and j are separated by a full cluster.

    Returns 0 for the adjacent part."""
    for level in range(1, L + 1):
        shift = L - level
        I, J = i >> shift, j >> shift
        gap = abs(I - J)
        if cyclic:
            gap = min(gap, (1 << level) - gap)
        if gap >= 2:
            return level
    return 0


def level_map_1d(N: int, cyclic: bool = False) -> np.ndarray:
    L = int(round(math.log2(N)))
    out = np.zeros((N, N), dtype=int)
    for i in range(N):
        for j in range(N):
            out[i, j] = level_of_pair_1d(i, j, L, cyclic)
    return out


def site_number_2d(i: int, j: int, L: int) -> int:
    digit = {(0, 0): 0, (0, 1): 1, (1, 0): 3, (1, 1): 2}
    n = 0
    for b in range(L - 1, -1, -1):
        n = 4 * n + digit[((i >> b) & 1, (j >> b) & 1)]
    return n


def level_map_2d(side: int) -> np.ndarray:
    """Level of each site pair; clusters are squares, separated when some axis gap >= 2 squares."""
    L = int(round(math.log2(side)))
    N = side * side
    pos = {}
    for i in range(side):
        for j in range(side):
            pos[site_number_2d(i, j, L)] = (i, j)
    out = np.zeros((N, N), dtype=int)
    for a in range(N):
        for b in range(N):
            ia, ja = pos[a]
            ib, jb = pos[b]
            for level in range(1, L + 1):
                s = L - level
                if max(abs((ia >> s) - (ib >> s)), abs((ja >> s) - (jb >> s))) >= 2:
                    out[a, b] = level
                    break
    return out


def magnitude_prep(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    """State, success probability and beta^2 of the level-set preparation, by loops."""
    N = len(x)
    L = int(round(math.log2(N)))
    levels = []
    for v in np.abs(x):
        lv = L - 1
        for cand in range(L - 1):
            if 2.0 ** (-(cand + 1)) < v <= 2.0 ** (-cand):
                lv = cand
                break
        levels.append(lv)
    counts = [levels.count(lv) for lv in range(L)]
    beta2 = sum(counts[lv] * 4.0 ** (-lv) for lv in range(L))
    amp = np.zeros(N, dtype=complex)
    for i in range(N):
        lv = levels[i]
        amp[i] = (1 / math.sqrt(L)) * (2.0 ** (-lv) / math.sqrt(beta2)) * x[i] / 2.0 ** (-lv)
    success = float(np.sum(np.abs(amp) ** 2))
    return amp / math.sqrt(success), success, beta2


def fourier_state(coeffs: dict[int, complex], N: int) -> np.ndarray:
    g = np.array([sum(c * np.exp(1j * n * 2 * math.pi * j / N) for n, c in coeffs.items()) for j in range(N)])
    return g / np.linalg.norm(g)


def direct_potential(x, m, p: float = 1.0) -> np.ndarray:
    out = np.zeros(len(x))
    for i in range(len(x)):
        for j in range(len(x)):
            if i != j:
                out[i] += m[j] / abs(x[i] - x[j]) ** p
    return out


def collocation_far(offset: int, N: int, p: float, lam: float) -> float:
    return lam**2 / (N * (2 * math.sin(math.pi * abs(offset) / N)) ** p)


def collocation_near(offset: int, N: int, p: float, lam: float, pieces: int = 8) -> float:
    """Midpoint rule on ``pieces`` sub-panels of panel ``offset`` seen from the centroid of panel 0."""
    h = 2 * math.pi / N
    total = 0.0
    for s in range(pieces):
        theta = offset * h - h / 2 + (s + 0.5) * h / pieces
        total += lam**2 / (N * pieces) / (2 * abs(math.sin(theta / 2))) ** p
    return total


def taylor_poly_error(p: float, rank: int, dmin: float, radius: float) -> float:
    """Remainder bound of the binomial series of |x - x'|^-p about a cluster center."""
    ratio = radius / dmin
    total = 0.0
    for q in range(rank, rank + 5000):
        total += math.comb(q + int(p) - 1, q) * ratio**q if float(p).is_integer() else \
            math.gamma(p + q) / (math.gamma(p) * math.factorial(q)) * ratio**q
    return dmin ** (-p) * total


def lcu_dense(mats, weights) -> np.ndarray:
    return sum(w * M for w, M in zip(weights, mats))


def kappa(A: np.ndarray) -> float:
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[0] / s[-1])
