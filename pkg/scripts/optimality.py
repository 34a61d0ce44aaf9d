"""Normalization factor of the hierarchical encoding against ||K|| and the naive encoding."""
from __future__ import annotations

from dataclasses import dataclass, field

from hblock.hierenc import optimality_report
from hblock.kernels import Kernel

from _common import parse_config, show


@dataclass
class Config:
    p: float = 1.0
    n_list: list = field(default_factory=lambda: [16, 32, 64, 128, 256, 512, 1024])
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    rep = optimality_report(Kernel.poly(cfg.p), cfg.n_list)
    show(["N", "alpha", "norm", "ratio", "naive_ratio"], rep.rows, cfg.csv or None)
    print(f"ratio band {rep.ratio_band:.4f}; naive exponent {rep.naive_exponent:.4f}; checks {rep.checks}")


if __name__ == "__main__":
    main()
