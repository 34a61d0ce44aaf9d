"""Condition numbers of dense kernel matrices as N grows, with and without a diagonal shift."""
from __future__ import annotations

from dataclasses import dataclass, field

from hblock.apps import condition_study
from hblock.kernels import Kernel, kernel_for_gaussian

from _common import parse_config, show


@dataclass
class Config:
    n_list: list = field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    diag: float = 2.0
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    zero = condition_study({"p0.5": Kernel.poly(0.5), "p1": Kernel.poly(1), "p2": Kernel.poly(2),
                            "gaussian": kernel_for_gaussian()}, cfg.n_list, None)
    shifted = condition_study({"inv_r+diag": Kernel.poly(1)}, cfg.n_list, cfg.diag)
    rows = zero.rows + shifted.rows
    show(["kernel", "N", "kappa"], rows, cfg.csv or None)
    for name, s in {**zero.slopes, **shifted.slopes}.items():
        print(f"log-log slope {name}: {s:.3f}")
    a = shifted.aic["inv_r+diag"]
    print(f"diag {cfg.diag}: AIC log {a['aic_log']:.2f} vs power {a['aic_power']:.2f}")


if __name__ == "__main__":
    main()
