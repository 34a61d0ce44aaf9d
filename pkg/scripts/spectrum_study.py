"""Singular spectra of smooth kernels on x = j / N: numerical rank and leading-vector overlap."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from hblock.apps import singular_spectrum, spectrum_rows
from hblock.cli import write_csv
from hblock.kernels import Family, Kernel

from _common import parse_config, show


@dataclass
class Config:
    n: int = 512
    threshold: float = 1e-10
    csv: str = ""


def main() -> None:
    cfg = parse_config(Config, __doc__)
    kernels = {
        "log": Kernel(Family.LOG),
        "polyharmonic": Kernel(Family.POLYHARMONIC, p=2),
        "multiquadric": Kernel(Family.MULTIQUADRIC, c=0.25),
        "gaussian": Kernel.expdecay(2.0, C=1.0),
    }
    summary, rows = [], []
    for name, k in kernels.items():
        s = singular_spectrum(k, cfg.n, scale=1 / cfg.n, threshold=cfg.threshold)
        summary.append({"kernel": name, "rank": s.rank, "overlap": s.overlap,
                        "sigma_1": float(s.sigma[0]), "sigma_min": float(s.sigma[-1])})
        rows.extend(spectrum_rows(name, s, cfg.n))
    show(["kernel", "rank", "overlap", "sigma_1", "sigma_min"], summary)
    if cfg.csv:
        write_csv(Path(cfg.csv), ["kernel", "N", "k", "sigma_k"], rows)
        print(f"wrote {cfg.csv}")


if __name__ == "__main__":
    main()
