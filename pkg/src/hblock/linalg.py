"""Small numerical helpers shared across modules: dense cap, operator norms."""
from __future__ import annotations

import os
from typing import Callable

import numpy as np

DEFAULT_DENSE_CAP = 4096
DENSE_SVD_LIMIT = 2048


def dense_cap() -> int:
    return int(os.environ.get("HIERENC_DENSE_CAP", DEFAULT_DENSE_CAP))


def check_dense(n: int, what: str = "matrix") -> None:
    cap = dense_cap()
    if n > cap:
        raise ValueError(
            f"refusing to materialize a dense {what} of size {n} > cap {cap} "
            "(set HIERENC_DENSE_CAP to override)"
        )


def power_norm(
    matvec: Callable[[np.ndarray], np.ndarray],
    rmatvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    tol: float = 1e-10,
    maxiter: int = 10_000,
    seed: int = 0,
) -> float:
    """Largest singular value by power iteration on A^H A."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(maxiter):
        y = rmatvec(matvec(x))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - sigma) <= tol * max(new, 1e-300):
            return float(new)
        sigma = new
    return float(sigma)


def operator_norm(A: np.ndarray) -> float:
    """Spectral norm: dense SVD up to DENSE_SVD_LIMIT, power iteration above."""
    A = np.asarray(A)
    if max(A.shape) <= DENSE_SVD_LIMIT:
        if A.size == 0:
            return 0.0
        return float(np.linalg.norm(A, 2))
    AH = A.conj().T
    return power_norm(lambda v: A @ v, lambda v: AH @ v, A.shape[1])


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def ilog2(n: int) -> int:
    """Exact log2 of a power of two."""
    if not is_pow2(n):
        raise ValueError(f"{n} is not a power of two")
    return n.bit_length() - 1
