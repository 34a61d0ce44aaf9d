"""Potentials of unit masses on a grid through the hierarchical encoding: accuracy and success probability."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hblock.apps import direct_potential, qfmm_potential
from hblock.kernels import PointSet

from _common import parse_config, show


@dataclass
class Config:
    n_list: list = field(default_factory=lambda: [16, 64, 256, 1024])
    seed: int = 0
    random_masses: bool = False
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for N in cfg.n_list:
        m = rng.uniform(0.5, 1.5, N) if cfg.random_masses else np.ones(N)
        pts = PointSet.grid(N).with_masses(m)
        res = qfmm_potential(pts)
        ref = direct_potential(pts)
        rows.append({"N": N, "alpha": res.alpha, "success_prob": res.success_prob,
                     "rel_error": float(np.linalg.norm(res.potential - ref) / np.linalg.norm(ref)),
                     "O_k": res.queries["O_k"]})
    show(["N", "alpha", "success_prob", "rel_error", "O_k"], rows, cfg.csv or None)


if __name__ == "__main__":
    main()
