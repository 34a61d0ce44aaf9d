"""Collocation system on a thin ring: norm of K, condition number, and the encoding's alpha/||K||."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hblock.apps import collocation_alpha, collocation_system, construction_tally, solve_reference

from _common import parse_config, show


@dataclass
class Config:
    p: float = 1.0
    n_list: list = field(default_factory=lambda: [32, 64, 128, 256, 512])
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    rows = []
    for N in cfg.n_list:
        sysm = collocation_system(N, cfg.p)
        s = np.linalg.svd(sysm.A, compute_uv=False)
        g = 2 + np.cos(2 * np.pi * np.arange(N) / N)
        sol = solve_reference(sysm.A, g)
        alpha = collocation_alpha(sysm)
        rows.append({"N": N, "norm_K": sysm.norm_K, "kappa": float(s[0] / s[-1]),
                     "kappa_bound": sysm.kappa_bound, "alpha_K": alpha, "ratio": alpha / sysm.norm_K,
                     "residual": sol.residual, "components": construction_tally(N)["components"]})
    show(["N", "norm_K", "kappa", "kappa_bound", "alpha_K", "ratio", "residual", "components"], rows,
         cfg.csv or None)


if __name__ == "__main__":
    main()
