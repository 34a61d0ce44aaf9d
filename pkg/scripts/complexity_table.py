"""Query units for forward application and inversion: hierarchical, naive dense and QRAM-style encodings."""
from __future__ import annotations

from dataclasses import dataclass, field

from hblock.apps import complexity_table
from hblock.kernels import Kernel

from _common import parse_config, show


@dataclass
class Config:
    p: float = 1.0
    kappa: float = 10.0
    eps: float = 1e-3
    n_list: list = field(default_factory=lambda: [16, 32, 64, 128, 256, 512, 1024])
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    rows, exps = complexity_table(Kernel.poly(cfg.p), cfg.n_list, cfg.kappa, cfg.eps)
    show(["method", "N", "alpha", "norm", "kappa", "forward_units", "inverse_units"], rows, cfg.csv or None)
    for method, e in exps.items():
        print(f"fitted exponent {method}: {e:.3f}")


if __name__ == "__main__":
    main()
