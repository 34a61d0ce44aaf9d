"""H-matrix compression and matvec: accuracy against the dense product and flop count per p N log N."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from hblock.hmatrix import compress, hmatvec
from hblock.hsplit import hierarchical_split
from hblock.kernels import EntryOracle, Kernel, PointSet

from _common import parse_config, show


@dataclass
class Config:
    p: float = 2.0
    rank: int = 24
    n_list: list = field(default_factory=lambda: [64, 128, 256, 512, 1024, 2048, 4096])
    dense_max: int = 2048
    seed: int = 0
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for N in cfg.n_list:
        pts = PointSet.grid(N)
        oracle = EntryOracle(Kernel.poly(cfg.p), pts)
        t0 = time.perf_counter()
        H = compress(oracle, hierarchical_split(pts), cfg.rank)
        v = rng.standard_normal(N)
        counter: dict = {}
        y = hmatvec(H, v, counter)
        seconds = time.perf_counter() - t0
        err = math.nan
        if N <= cfg.dense_max:
            ref = oracle.matrix() @ v
            err = float(np.linalg.norm(y - ref) / np.linalg.norm(ref))
        rows.append({"N": N, "flops": counter["flops"], "per_pNlogN": counter["flops"] / (cfg.rank * N * math.log2(N)),
                     "rel_error": err, "seconds": seconds})
    show(["N", "flops", "per_pNlogN", "rel_error", "seconds"], rows, cfg.csv or None)


if __name__ == "__main__":
    main()
