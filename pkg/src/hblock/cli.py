"""Command-line front end.

Every subcommand builds a config dict and hands it to ``run``. Outputs go to
``<out>/<hash of config>/`` as CSV files plus a ledger.json; floats carry 17
significant digits. Failures print an error JSON on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import apps, blockenc, hierenc, hmatrix, hsplit, stateprep
from .kernels import EntryOracle, Kernel, PointSet

DEFAULT_COND_NS = [16, 32, 64, 128, 256, 512]


class UsageError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------------------
# serialization


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def to_json(obj: Any, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits; non-finite floats become null."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        return "[" + ", ".join(to_json(v, indent + 1) for v in seq) + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(float(obj)) else "null"
    if isinstance(obj, complex):
        return to_json([obj.real, obj.imag], indent)
    return json.dumps(str(obj))


def canonical(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """Hash of the experiment itself; the output root does not change it."""
    body = {k: v for k, v in config.items() if k != "out"}
    return hashlib.sha256(canonical(body).encode()).hexdigest()[:16]


def write_csv(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r[h]) for h in header])
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# config validation

COMMON = {"command", "out", "seed"}
FIELDS: dict[str, set[str]] = {
    "split": {"n", "variant", "shift", "dim"},
    "compress": {"kernel", "n", "variant", "shift", "rank", "method"},
    "matvec": {"kernel", "n", "variant", "shift", "rank", "method"},
    "encode": {"kernel", "n", "eps", "a_hat"},
    "hier-encode": {"kernel", "n", "variant", "shift", "eps", "report", "level_prep", "dim"},
    "optimality": {"kernel", "n_list"},
    "sparsify": {"kernel", "n", "eps_s", "d"},
    "prep": {"mode", "input", "n", "coeffs", "report"},
    "fmm": {"n", "masses", "eps", "p"},
    "ie": {"n_list", "p", "lambda"},
    "cond": {"kernels", "n_list", "diag"},
    "spectrum": {"kernel", "n", "scale"},
    "complexity": {"kernel", "n_list", "kappa", "eps"},
}
VARIANT_ALIASES = {"plain": "Plain1D", "cyclic": "Cyclic", "shifted": "ShiftedRow", "skew": "ShiftedSkew",
                   "2d": "Uniform2D"}


def _need(config: dict, key: str) -> Any:
    if key not in config:
        raise UsageError(key, f"missing required field '{key}'")
    return config[key]


def _int(config: dict, key: str, default: Optional[int] = None, minimum: int = 1) -> int:
    v = config.get(key, default)
    if v is None:
        raise UsageError(key, f"missing required field '{key}'")
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise UsageError(key, f"'{key}' must be an integer >= {minimum}")
    return v


def _float(config: dict, key: str, default: Optional[float] = None) -> float:
    v = config.get(key, default)
    if v is None:
        raise UsageError(key, f"missing required field '{key}'")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise UsageError(key, f"'{key}' must be a number")
    return float(v)


def _n_list(config: dict) -> list[int]:
    v = _need(config, "n_list")
    if not isinstance(v, list) or not v:
        raise UsageError("n_list", "'n_list' must be a non-empty list of integers")
    if any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in v):
        raise UsageError("n_list", "'n_list' entries must be positive integers")
    return v


def _kernel(config: dict, key: str = "kernel", default: Optional[dict] = None) -> Kernel:
    spec = config.get(key, default)
    if spec is None:
        raise UsageError(key, f"missing required field '{key}'")
    try:
        return Kernel.from_json(spec)
    except (ValueError, TypeError) as exc:
        raise UsageError(key, f"bad kernel spec: {exc}") from exc


def _variant(config: dict) -> str:
    v = config.get("variant", "2d" if config.get("dim") == 2 else "plain")
    v = VARIANT_ALIASES.get(v, v)
    if v not in hsplit.VARIANTS:
        raise UsageError("variant", f"unknown variant '{config.get('variant')}'")
    return v


def validate(config: Any) -> dict:
    if not isinstance(config, dict):
        raise UsageError("", "config must be a JSON object")
    cmd = config.get("command")
    if cmd not in FIELDS:
        raise UsageError("command", f"unknown command {cmd!r}")
    extra = set(config) - COMMON - FIELDS[cmd]
    if extra:
        field = sorted(extra)[0]
        raise UsageError(field, f"field '{field}' is not valid for '{cmd}'")
    if "seed" in config:
        _int(config, "seed", minimum=0)
    if "n_list" in config:
        _n_list(config)
    return config


# ---------------------------------------------------------------------------
# commands; each returns (csv tables, ledger) where tables maps name -> (header, rows)

Tables = dict[str, tuple[list[str], list[dict]]]


def _points(n: int, variant: str, dim: int = 1) -> PointSet:
    if variant == "Uniform2D" or dim == 2:
        return PointSet.grid2d(n)
    return PointSet.grid(n, periodic=variant == "Cyclic")


def _oracle(kernel: Kernel, pts: PointSet, variant: str, shift: int) -> EntryOracle:
    return EntryOracle(kernel, pts, col_shift=shift if variant == "ShiftedRow" else 0)


def cmd_split(c: dict) -> tuple[Tables, dict]:
    n = _int(c, "n", minimum=2)
    variant = _variant(c)
    shift = _int(c, "shift", 0, minimum=0)
    pts = _points(n, variant, c.get("dim", 1))
    sp = hsplit.hierarchical_split(pts, variant, shift=shift)
    rows = []
    for b in sp.blocks():
        rows.append({"level": b.level, "I": b.key[0], "J": b.key[1], "rows": len(b.rows), "cols": len(b.cols),
                     "row_first": int(b.rows[0]), "col_first": int(b.cols[0])})
    cover = sp.coverage_counts()
    ledger = {"variant": variant, "n": sp.n, "L": sp.L, "blocks": len(rows),
              "adjacent_nnz": int(len(sp.adjacent)), "tiles_exactly_once": bool(np.all(cover == 1)),
              "level_sparsity": {str(lv): list(hsplit.block_sparsity(sp, lv)) for lv in sp.levels},
              "adjacent_sparsity": list(sp.adjacent_sparsity())}
    return {"blocks": (["level", "I", "J", "rows", "cols", "row_first", "col_first"], rows)}, ledger


def _compress(c: dict) -> tuple[hmatrix.HMatrix, EntryOracle]:
    kernel = _kernel(c)
    n = _int(c, "n", minimum=4)
    variant = _variant(c)
    shift = _int(c, "shift", 0, minimum=0)
    pts = _points(n, variant)
    oracle = _oracle(kernel, pts, variant, shift)
    sp = hsplit.hierarchical_split(pts, variant, shift=shift)
    rank = _int(c, "rank", 16)
    method = c.get("method", "auto")
    if method not in ("auto", "taylor", "svd"):
        raise UsageError("method", "method must be auto, taylor or svd")
    return hmatrix.compress(oracle, sp, rank, method), oracle


def cmd_compress(c: dict, outdir: Path) -> tuple[Tables, dict]:
    H, oracle = _compress(c)
    (outdir / "hmatrix.bin").write_bytes(H.to_bytes())
    rows = [{"level": b.level, "I": b.key[0], "J": b.key[1], "rank": b.factors.rank, "method": b.factors.method}
            for b in H.blocks]
    ledger: dict = {"n": H.n, "blocks": len(rows), "methods": H.methods()}
    if H.n <= 2048:
        K = oracle.matrix()
        ledger["relative_error"] = float(np.linalg.norm(H.to_dense() - K) / np.linalg.norm(K))
    return {"blocks": (["level", "I", "J", "rank", "method"], rows)}, ledger


def cmd_matvec(c: dict) -> tuple[Tables, dict]:
    H, oracle = _compress(c)
    rng = np.random.default_rng(c.get("seed", 0))
    v = rng.standard_normal(H.n)
    counter: dict = {}
    y = hmatrix.hmatvec(H, v, counter)
    ledger: dict = {"n": H.n, "flops": counter.get("flops")}
    rows = [{"i": i, "x": float(v[i]), "y": float(y[i])} for i in range(H.n)]
    if H.n <= 4096:
        ref = oracle.matrix() @ v
        ledger["relative_error"] = float(np.linalg.norm(y - ref) / np.linalg.norm(ref))
    return {"matvec": (["i", "x", "y"], rows)}, ledger


def cmd_encode(c: dict) -> tuple[Tables, dict]:
    kernel = _kernel(c)
    n = _int(c, "n", minimum=1)
    oracle = EntryOracle(kernel, PointSet.grid(n))
    K = oracle.matrix()
    a_hat = _float(c, "a_hat", float(np.max(np.abs(K))) or 1.0)
    enc = blockenc.encode_dense_naive(oracle, a_hat, _float(c, "eps", 0.0))
    resid = float(np.linalg.norm(enc.encoded() - K, 2))
    return {}, {**enc.ledger(), "residual": resid}


def cmd_hier_encode(c: dict) -> tuple[Tables, dict]:
    kernel = _kernel(c)
    n = _int(c, "n", minimum=4)
    variant = _variant(c)
    shift = _int(c, "shift", 0, minimum=0)
    pts = _points(n, variant)
    oracle = _oracle(kernel, pts, variant, shift)
    sp = hsplit.hierarchical_split(pts, variant, shift=shift)
    plan = hierenc.plan_hierarchical(oracle, sp)
    rows = [{"level": lv, "alpha": a, "k_max": plan.level_bounds[lv], "d": plan.sparsity[lv][0]}
            for lv, a in sorted(plan.level_alphas.items())]
    rows.append({"level": 0, "alpha": plan.adjacent_alpha, "k_max": plan.adjacent_bound,
                 "d": plan.adjacent_sparsity[0]})
    ledger: dict = {"variant": variant, "n": sp.n, "alpha": plan.alpha}
    try:
        ledger["closed_form"] = hierenc.normalization_factor(kernel, n, pts.dim)
    except ValueError:
        ledger["closed_form"] = None
    if c.get("report", False) or sp.n <= 2048:
        enc = hierenc.encode_hierarchical(oracle, sp, _float(c, "eps", 0.0), c.get("level_prep", "exact"))
        K = oracle.matrix()
        ledger.update(enc.ledger())
        ledger["residual"] = float(np.linalg.norm(enc.encoded() - K, 2))
        ledger["norm"] = float(np.linalg.norm(K, 2))
        ledger["ratio"] = enc.alpha / ledger["norm"]
    return {"levels": (["level", "alpha", "k_max", "d"], rows)}, ledger


def cmd_optimality(c: dict) -> tuple[Tables, dict]:
    kernel = _kernel(c)
    rep = hierenc.optimality_report(kernel, _n_list(c))
    ledger = {"ratio_band": rep.ratio_band, "naive_exponent": rep.naive_exponent, "checks": rep.checks}
    return {"optimality": (["N", "alpha", "norm", "ratio", "naive_ratio"], rep.rows)}, ledger


def cmd_sparsify(c: dict) -> tuple[Tables, dict]:
    kernel = _kernel(c)
    n = _int(c, "n", minimum=2)
    oracle = EntryOracle(kernel, PointSet.grid(n))
    if "d" in c:
        d = _int(c, "d")
    else:
        eps_s = _float(c, "eps_s")
        try:
            d = hierenc.required_band(kernel, eps_s)
        except ValueError:
            return {}, {"divergent": True, "message": "tail does not decay fast enough to sparsify"}
    res = hierenc.sparsify_band(oracle, d)
    row = {"d": res.d, "dense_error": res.dense_error if res.dense_error is not None else math.nan,
           "streamed_bound": res.streamed_bound, "analytic": res.analytic}
    return ({"sparsify": (["d", "dense_error", "streamed_bound", "analytic"], [row])},
            {**row, "divergent": res.divergent, "nnz": int(res.band.nnz)})


def _read_vector(path: str) -> np.ndarray:
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line[0].isalpha():
            continue
        parts = [p for p in line.split(",") if p.strip()]
        vals.append(complex(float(parts[-2]), float(parts[-1])) if len(parts) >= 2 else float(parts[0]))
    return np.asarray(vals)


def cmd_prep(c: dict) -> tuple[Tables, dict]:
    mode = c.get("mode")
    if mode == "fourier":
        coeffs = c.get("coeffs")
        if coeffs is None and "input" in c:
            coeffs = _read_vector(c["input"]).real.tolist()
        if not isinstance(coeffs, list) or not coeffs:
            raise UsageError("coeffs", "fourier mode needs 'coeffs' (list ordered -p..p) or 'input'")
        res = stateprep.prep_smooth_fourier(coeffs, _int(c, "n"))
    elif mode == "magnitude":
        if "input" not in c:
            raise UsageError("input", "magnitude mode needs an 'input' vector file")
        x = _read_vector(c["input"])
        res = stateprep.prep_magnitude_hier(x / np.linalg.norm(x))
    else:
        raise UsageError("mode", "mode must be 'fourier' or 'magnitude'")
    rows = [{"j": j, "re": float(np.real(a)), "im": float(np.imag(a))} for j, a in enumerate(res.state)]
    ledger = {"success_prob": res.success_prob, "resources": res.resources.to_json(), **res.params}
    return {"state": (["j", "re", "im"], rows)}, ledger


def cmd_fmm(c: dict) -> tuple[Tables, dict]:
    n = _int(c, "n", minimum=2)
    kind = c.get("masses", "unit")
    rng = np.random.default_rng(c.get("seed", 0))
    if kind == "unit":
        m = np.ones(n)
    elif kind == "random":
        m = rng.uniform(0.5, 1.5, n)
    else:
        raise UsageError("masses", "masses must be 'unit' or 'random'")
    pts = PointSet.grid(n, masses=m)
    p = _float(c, "p", 1.0)
    res = apps.qfmm_potential(pts, _float(c, "eps", 0.0), p)
    direct = apps.direct_potential(pts, p)
    rows = [{"i": i, "mass": m[i], "potential": res.potential[i], "direct": direct[i]} for i in range(n)]
    ledger = {"success_prob": res.success_prob, "alpha": res.alpha, "queries": dict(res.queries),
              "relative_error": float(np.linalg.norm(res.potential - direct) / np.linalg.norm(direct))}
    return {"potential": (["i", "mass", "potential", "direct"], rows)}, ledger


def cmd_ie(c: dict) -> tuple[Tables, dict]:
    p = _float(c, "p", 1.0)
    lam = c.get("lambda")
    rows = []
    for N in _n_list(c):
        s = apps.collocation_system(N, p, lam)
        alpha = apps.collocation_alpha(s)
        kappa = float(np.linalg.cond(s.A, 2))
        rows.append({"N": N, "norm_K": s.norm_K, "alpha_K": alpha, "ratio": alpha / s.norm_K, "kappa": kappa,
                     "kappa_bound": s.kappa_bound if s.kappa_defined else math.nan})
    ratios = [r["ratio"] for r in rows]
    ledger = {"p": p, "ratio_band": max(ratios) / min(ratios),
              "kappa_bound_holds": all(r["kappa"] <= r["kappa_bound"] + 1e-10 for r in rows
                                       if not math.isnan(r["kappa_bound"]))}
    return {"ie": (["N", "norm_K", "alpha_K", "ratio", "kappa", "kappa_bound"], rows)}, ledger


def cmd_cond(c: dict) -> tuple[Tables, dict]:
    Ns = _n_list(c) if "n_list" in c else DEFAULT_COND_NS
    diag = c.get("diag")
    specs = c.get("kernels")
    if specs is None:
        kernels = {"inv_r": Kernel.poly(1)} if diag is not None else {
            "poly_p1": Kernel.poly(1), "poly_p2": Kernel.poly(2), "gaussian": Kernel.expdecay(2.0, C=1.0)}
    else:
        if not isinstance(specs, dict) or not specs:
            raise UsageError("kernels", "'kernels' must map names to kernel specs")
        kernels = {name: _kernel(specs, name) for name in specs}
    st = apps.condition_study(kernels, Ns, None if diag is None else float(diag))
    return {"cond": (["kernel", "N", "kappa"], st.rows)}, {"slopes": st.slopes, "aic": st.aic}


def cmd_spectrum(c: dict) -> tuple[Tables, dict]:
    kernel = _kernel(c)
    n = _int(c, "n")
    spec = apps.singular_spectrum(kernel, n, scale=_float(c, "scale", 1.0))
    name = kernel.family.value
    rows = list(apps.spectrum_rows(name, spec, n))
    return {"spectrum": (["kernel", "N", "k", "sigma_k"], rows)}, {"rank": spec.rank, "overlap": spec.overlap}


def cmd_complexity(c: dict) -> tuple[Tables, dict]:
    kernel = _kernel(c)
    rows, exps = apps.complexity_table(kernel, _n_list(c), _float(c, "kappa", 10.0), _float(c, "eps", 1e-3))
    header = ["method", "N", "alpha", "norm", "kappa", "forward_units", "inverse_units"]
    return {"complexity": (header, rows)}, {"exponents": exps}


COMMANDS: dict[str, Callable[..., tuple[Tables, dict]]] = {
    "split": cmd_split, "compress": cmd_compress, "matvec": cmd_matvec, "encode": cmd_encode,
    "hier-encode": cmd_hier_encode, "optimality": cmd_optimality, "sparsify": cmd_sparsify,
    "prep": cmd_prep, "fmm": cmd_fmm, "ie": cmd_ie, "cond": cmd_cond, "spectrum": cmd_spectrum,
    "complexity": cmd_complexity,
}


def run(config: dict) -> Path:
    """Validate, execute, and write CSVs plus ledger.json; returns the run directory."""
    config = validate(config)
    cmd = config["command"]
    outdir = Path(config.get("out", "runs")) / config_hash(config)
    outdir.mkdir(parents=True, exist_ok=True)
    fn = COMMANDS[cmd]
    try:
        tables, ledger = fn(config, outdir) if cmd == "compress" else fn(config)
    except Exception:
        # leave nothing behind for a failed run
        if not any(outdir.iterdir()):
            outdir.rmdir()
        raise
    for name, (header, rows) in tables.items():
        write_csv(outdir / f"{name}.csv", header, rows)
    (outdir / "ledger.json").write_text(to_json({"command": cmd, "config": config, **ledger}) + "\n")
    return outdir


# ---------------------------------------------------------------------------
# argument parsing


def _json_arg(text: str) -> Any:
    p = Path(text)
    if p.exists():
        return json.loads(p.read_text())
    return json.loads(text)


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hblock", description="hierarchical block-encodings of kernel matrices")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, *flags: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name)
        p.add_argument("--out", default="runs")
        p.add_argument("--seed", type=int)
        spec = {
            "kernel": dict(type=_json_arg), "n": dict(type=int), "n-list": dict(type=_int_list),
            "variant": dict(), "shift": dict(type=int), "rank": dict(type=int), "method": dict(),
            "eps": dict(type=float), "a-hat": dict(type=float), "report": dict(action="store_true", default=None),
            "level-prep": dict(), "eps-s": dict(type=float), "d": dict(type=int), "mode": dict(),
            "input": dict(), "coeffs": dict(type=_json_arg), "masses": dict(), "p": dict(type=float),
            "lambda": dict(type=float), "kernels": dict(type=_json_arg), "diag": dict(type=float),
            "scale": dict(type=float), "kappa": dict(type=float), "dim": dict(type=int),
        }
        for f in flags:
            p.add_argument(f"--{f}", dest=f.replace("-", "_"), **spec[f])
        return p

    add("split", "n", "variant", "shift", "dim")
    add("compress", "kernel", "n", "variant", "shift", "rank", "method")
    add("matvec", "kernel", "n", "variant", "shift", "rank", "method")
    add("encode", "kernel", "n", "eps", "a-hat")
    add("hier-encode", "kernel", "n", "variant", "shift", "eps", "report", "level-prep", "dim")
    add("optimality", "kernel", "n-list")
    add("sparsify", "kernel", "n", "eps-s", "d")
    add("prep", "mode", "input", "n", "coeffs", "report")
    add("fmm", "n", "masses", "eps", "p")
    add("ie", "n-list", "p", "lambda")
    add("cond", "kernels", "n-list", "diag")
    add("spectrum", "kernel", "n", "scale")
    add("complexity", "kernel", "n-list", "kappa", "eps")
    r = sub.add_parser("run", help="execute a JSON config file")
    r.add_argument("config", type=_json_arg)
    return ap


def _error(kind: str, message: str, field: Optional[str] = None) -> str:
    return json.dumps({"error": kind, "message": message, "field": field})


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            print(_error("usage", "could not parse arguments"), file=sys.stderr)
        return int(exc.code or 0)
    except (ValueError, json.JSONDecodeError) as exc:
        print(_error("usage", str(exc)), file=sys.stderr)
        return 2
    if args.command == "run":
        config = args.config
    else:
        config = {k: v for k, v in vars(args).items() if v is not None}
    try:
        outdir = run(config)
    except UsageError as exc:
        print(_error("usage", str(exc), exc.field), file=sys.stderr)
        return 2
    except (ValueError, AssertionError, IndexError, KeyError) as exc:
        print(_error(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1
    print(json.dumps({"ok": True, "out": str(outdir)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
