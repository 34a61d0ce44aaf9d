"""Shared helpers for the experiment scripts: config overrides and table output."""
from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path
from typing import Any, Sequence

from hblock.cli import fmt, write_csv


def parse_config(cls: type, description: str) -> Any:
    """Build ``cls`` from defaults, overriding fields from the command line."""
    ap = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, (list, tuple)):
            ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=default,
                            type=lambda s: [int(t) for t in s.split(",")])
        elif isinstance(default, bool):
            ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=default, action="store_true")
        else:
            ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=default,
                            type=type(default) if default is not None else str)
    return cls(**vars(ap.parse_args()))


def show(header: Sequence[str], rows: Sequence[dict], csv_path: str | None = None) -> None:
    widths = [max(len(h), *(len(_short(r[h])) for r in rows)) for h in header]
    print("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(_short(r[h]).rjust(w) for h, w in zip(header, widths)))
    if csv_path:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        write_csv(Path(csv_path), header, rows)
        print(f"wrote {csv_path}")


def _short(v: Any) -> str:
    return f"{v:.6g}" if isinstance(v, float) else fmt(v)
