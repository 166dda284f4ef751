"""Batch experiment runner: config in, CSV plus JSON sidecar out.

Usage: python -m torus_ons <experiment> --config PATH [--out DIR] [--seed INT] [--threads INT]

Exit status: 0 success, 2 config/schema error, 3 numerical guard trip, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .extension import ExtensionOperator, dispersive_grid, dispersive_ratio
from .hartree import BlowUpError, DivergenceError, HartreeConfig, evolve
from .norms import DensityMatrix, EigensolverError, MixedNormSpec
from .spectral_core import GridFunction, ResolutionError, TorusGrid, build_lattice, product_exact_grid
from .strichartz_lab import (
    dyadic_schatten_profile,
    duality_search,
    endpoint_decomposition,
    exponent_fit,
    extremal_instance,
    lhs_functional,
    lp_weight_norm,
    random_orthonormal_family,
    random_weight,
)

OUT_ENV = "TORUS_ONS_OUT"

EXIT_OK, EXIT_SCHEMA, EXIT_GUARD, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    """Config does not match the experiment schema."""


# ---------------------------------------------------------------------------
# config parsing

def _parse_scalar(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if text.lower() in ("inf", "infinity"):
        return math.inf
    if "," in text:
        return [_parse_scalar(t) for t in text.split(",") if t.strip()]
    return text


def parse_config_text(text: str) -> dict:
    """Accept a JSON object or flat key=value lines ('#' starts a comment)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError("JSON config must be an object")
        return obj
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"duplicate key {key!r}")
        out[key] = _parse_scalar(val)
    return out


def _number(v, name, integer=False, allow_inf=False):
    if isinstance(v, str) and v.lower() in ("inf", "infinity") and allow_inf:
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    if math.isinf(v) and not allow_inf:
        raise ConfigError(f"{name} must be finite")
    if math.isnan(v):
        raise ConfigError(f"{name} is NaN")
    if integer:
        if v != int(v):
            raise ConfigError(f"{name} must be an integer")
        return int(v)
    return float(v)


def _int_list(v, name):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{name} must be a non-empty list")
    return [_number(x, name, integer=True) for x in v]


# key -> (converter, default); a default of REQUIRED means the key must be present
REQUIRED = object()


def _exp(v, name):
    return _number(v, name, allow_inf=True)


def _str_choice(*choices):
    def conv(v, name):
        if v not in choices:
            raise ConfigError(f"{name} must be one of {choices}, got {v!r}")
        return v
    return conv


def _int(v, name):
    return _number(v, name, integer=True)


def _float(v, name):
    return _number(v, name)


SCHEMAS = {
    "sweep": {
        "d": (_int, REQUIRED), "alpha": (_exp, REQUIRED), "Ns": (_int_list, REQUIRED),
        "p": (_exp, REQUIRED), "q": (_exp, REQUIRED),
    },
    "endpoint": {
        "d": (_int, 1), "N": (_int, REQUIRED), "seed": (_int, 0), "trials": (_int, 1),
    },
    "dispersive": {
        "d": (_int, REQUIRED), "Ns": (_int_list, REQUIRED), "oversample": (_int, 32),
    },
    "duality": {
        "d": (_int, REQUIRED), "N": (_int, REQUIRED), "rank": (_int, 3), "p": (_exp, REQUIRED),
        "q": (_exp, REQUIRED), "alpha": (_exp, REQUIRED), "trials": (_int, 200), "seed": (_int, 0),
    },
    "dyadic": {
        "d": (_int, REQUIRED), "N": (_int, REQUIRED), "alpha": (_exp, 2.0),
        "weight": (_str_choice("one", "random"), "one"), "seed": (_int, 0), "Gt": (_int, 0),
    },
    "hartree": {
        "d": (_int, REQUIRED), "N": (_int, REQUIRED), "a": (_float, REQUIRED), "dt": (_float, REQUIRED),
        "T": (_float, REQUIRED), "rank": (_int, 2), "seed": (_int, 0), "monitor_every": (_int, 10),
        "scheme": (_str_choice("strang", "picard"), "strang"), "coupling": (_float, 1.0),
    },
}


def resolve_config(experiment: str, raw: dict, seed: int | None = None) -> dict:
    """Validate raw against the experiment schema; unknown keys are rejected."""
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    schema = SCHEMAS[experiment]
    raw = dict(raw)
    raw.pop("experiment", None)
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys for {experiment}: {', '.join(unknown)}")
    if seed is not None:
        if "seed" not in schema:
            raise ConfigError(f"{experiment} takes no seed")
        raw["seed"] = seed
    out = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            out[key] = conv(raw[key], key)
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            out[key] = default
    if out.get("d", 1) < 1 or out.get("N", 1) < 1:
        raise ConfigError("d and N must be >= 1")
    return out


# ---------------------------------------------------------------------------
# experiments; each returns (header, rows, extra sidecar fields)

def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_sweep(cfg, threads=1):
    spec = MixedNormSpec(cfg["p"], cfg["q"])
    d = cfg["d"]

    def cell(N):
        w, fam = extremal_instance(d, N)
        op = ExtensionOperator(fam.lattice, product_exact_grid(d, N))
        lhs = lhs_functional(w, fam, spec, op)
        la = lp_weight_norm(w, cfg["alpha"])
        return [N, lhs, la, lhs / la]

    rows = _map(cell, cfg["Ns"], threads)
    fit = exponent_fit([r[0] for r in rows], [r[3] for r in rows])
    rows.append(["fit_slope", "", "", fit.slope])
    columns = {
        "N": "frequency cutoff (dimensionless)",
        "lhs": "mixed norm of the density sum_j lambda_j |E_N a_j|^2 (normalized measure)",
        "l_alpha": "l^alpha norm of the weights",
        "ratio": "lhs / l_alpha; the fit_slope row holds the log-log slope against N",
    }
    return ["N", "lhs", "l_alpha", "ratio"], rows, {"columns": columns, "fit_max_residual": fit.max_residual}


def run_endpoint(cfg, threads=1):
    if cfg["d"] != 1:
        raise ConfigError("endpoint experiment is one-dimensional")
    N = cfg["N"]
    lat = build_lattice(1, N)
    op = ExtensionOperator(lat, product_exact_grid(1, N))

    def cell(seed):
        rng = np.random.default_rng(seed)
        W1, W2 = random_weight(op.grid, rng), random_weight(op.grid, rng)
        rep = endpoint_decomposition(W1, W2, N, op)
        return [seed, rep.total, rep.term_I, rep.term_II.real, rep.bound, rep.residual]

    rows = _map(cell, range(cfg["seed"], cfg["seed"] + cfg["trials"]), threads)
    columns = {
        "seed": "RNG seed of the weight pair",
        "total": "squared Hilbert-Schmidt norm of W1 E E* W2",
        "I": "diagonal (zero-frequency) term",
        "II": "off-diagonal term, real part",
        "bound": "6N ||W1||^2 ||W2||^2 in L^4_t L^2_x",
        "residual": "|total - (I + II)|",
    }
    return ["seed", "total", "I", "II", "bound", "residual"], rows, {"columns": columns}


def run_dispersive(cfg, threads=1):
    d, ov = cfg["d"], cfg["oversample"]

    def cell(N):
        g = TorusGrid(d, ov * N, ov * N) if ov != 32 else dispersive_grid(d, N)
        return [N, dispersive_ratio(d, N, g)]

    rows = _map(cell, cfg["Ns"], threads)
    vals = np.array([r[1] for r in rows])
    spread = float((vals.max() - vals.min()) / vals.mean())
    rows.append(["relative_spread", spread])
    columns = {
        "N": "frequency cutoff",
        "ratio": "sup of |t|^{d/2} |K_N(x,t)| over 0 < |t| <= 1/N; last row is (max - min)/mean",
    }
    return ["N", "ratio"], rows, {"columns": columns}


def run_duality(cfg, threads=1):
    d, N = cfg["d"], cfg["N"]
    lat = build_lattice(d, N)
    rng = np.random.default_rng(cfg["seed"])
    fam = random_orthonormal_family(lat, cfg["rank"], rng)
    w = rng.uniform(0.5, 1.5, cfg["rank"])
    op = ExtensionOperator(lat, product_exact_grid(d, N))
    res = duality_search(w, fam, MixedNormSpec(cfg["p"], cfg["q"]), cfg["alpha"], op,
                         trials=cfg["trials"], seed=cfg["seed"] + 1)
    header = ["R1", "max_R2", "min_R2", "max_pairing_over_R2"]
    columns = {
        "R1": "density mixed norm over ||lambda||_alpha",
        "max_R2": "largest Schatten ratio ||W E E* W*||_{alpha'} / ||W||^2 over trials",
        "min_R2": "smallest Schatten ratio over trials",
        "max_pairing_over_R2": "largest <rho, |W|^2> / (||lambda|| ||W||^2 R2(W)); at most 1 by Hoelder",
    }
    return header, [[res[k] for k in header]], {"columns": columns}


def run_dyadic(cfg, threads=1):
    d, N = cfg["d"], cfg["N"]
    lat = build_lattice(d, N)
    Gt = cfg["Gt"] or 4 * (2 * N * N + 1)
    grid = TorusGrid(d, 2 * N + 2, Gt)
    op = ExtensionOperator(lat, grid)
    if cfg["weight"] == "one":
        W = GridFunction(grid, np.ones(grid.shape, dtype=complex))
    else:
        W = random_weight(grid, np.random.default_rng(cfg["seed"]))
    prof = dyadic_schatten_profile(W, W, N, cfg["alpha"], op)
    rows = [[r.j, r.lo, r.hi, r.norm, r.frobenius_oracle] for r in prof.rows]
    extra = {"columns": {
        "j": "shell index, |t - t'| in [2^{j-1}, 2^j)",
        "lo": "shell lower edge (time units of the unit torus)",
        "hi": "shell upper edge, clipped at 1/N",
        "norm": "Schatten-alpha norm of the shell operator",
        "frobenius_oracle": "closed-form Hilbert-Schmidt norm for W = 1",
    }, "grid": [grid.Gx, grid.Gt]}
    if prof.fit is not None:
        extra["fit_slope"] = prof.fit.slope
    return ["j", "lo", "hi", "norm", "frobenius_oracle"], rows, extra


def run_hartree(cfg, threads=1):
    hc = HartreeConfig(cfg["d"], cfg["N"], cfg["a"], cfg["dt"], cfg["T"], cfg["scheme"],
                       cfg["monitor_every"], cfg["coupling"])
    lat = build_lattice(hc.d, hc.N)
    if cfg["rank"] > lat.size:
        raise ConfigError("rank exceeds the number of modes")
    fam = random_orthonormal_family(lat, cfg["rank"], np.random.default_rng(cfg["seed"]))
    gamma0 = DensityMatrix(lat, np.ones(cfg["rank"]), fam.vectors)
    traj, report = evolve(hc, gamma0)
    header, rows = traj.csv_rows()
    columns = {
        "time": "time on the unit torus",
        "gram_deviation": "max |Gram - Id| of the orbitals",
        "energy": "-2 pi sum lambda |n|^2 |a|^2 + (1/2) int (w_a * rho) rho",
        "trace": "trace of the density matrix",
        "mass_j": "l^2 mass of orbital j",
    }
    return header, rows, {"columns": columns, "report": report.as_dict()}


RUNNERS = {
    "sweep": run_sweep, "endpoint": run_endpoint, "dispersive": run_dispersive,
    "duality": run_duality, "dyadic": run_dyadic, "hartree": run_hartree,
}


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(experiment: str, raw: dict, out_dir: Path, seed: int | None = None, threads: int = 1):
    """Resolve, execute and write; returns (csv_path, json_path). Nothing is written on failure."""
    cfg = resolve_config(experiment, raw, seed)
    header, rows, extra = RUNNERS[experiment](cfg, threads)
    csv_text = format_csv(header, rows)
    sidecar = {"experiment": experiment, "version": __version__, "config": cfg, **extra}
    json_text = json.dumps(_jsonable(sidecar), indent=2, sort_keys=True) + "\n"
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / f"{experiment}.csv", out_dir / f"{experiment}.json"
    _atomic_write(csv_path, csv_text)
    try:
        _atomic_write(json_path, json_text)
    except BaseException:
        csv_path.unlink(missing_ok=True)
        raise
    return csv_path, json_path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torus-ons", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=sorted(RUNNERS))
    p.add_argument("--config", required=True, help="JSON object or key=value file")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./results)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="parallel cells (results are order-stable)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_SCHEMA
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or "results")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        raw = parse_config_text(text)
        paths = run(args.experiment, raw, out_dir, args.seed, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (BlowUpError, DivergenceError, ResolutionError, EigensolverError) as exc:
        print(f"guard tripped: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # invalid parameter combinations caught by the library
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    for path in paths:
        print(path)
    return EXIT_OK
