"""Command-line front end: ``rankhc <subcommand> ...``.

Every run writes a manifest (resolved arguments, seeds, versions) next to its
output; ``rankhc replay MANIFEST`` re-executes it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (DEFAULT_B, DEFAULT_MC, TableError, load_table, save_table, table_filename,
                          tabulate_null, test_midrank_naive, test_midrank_permutation,
                          test_random_ties)
from .comparators import FAMILIES, OracleNullSpec, dist_aware_hc, friedman_test, raw_permutation_hc
from .data import apply_direction, load_csv
from .hc import EXTENDED, STANDARD, default_k, make_grid
from .rng import fresh_seed
from .simgen import (CSV_FIELDS, METHODS, SETTINGS, MethodConfig, SignalSpec, appendix_b_samplers,
                     appendix_c_samplers, appendix_d_fixture, curves_to_rows, grid_experiment,
                     power_experiment, stream_length_experiment)
from .theory import anomaly_characteristics, rho, rho_tilde

RANDOMIZED = {"test", "tabulate", "simulate", "friedman", "dist-hc", "perm-hc", "fixtures"}


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _add_seed(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int, help="64-bit seed (required unless --random-seed)")
    g.add_argument("--random-seed", action="store_true", help="draw a fresh seed and record it")


def _add_input(p):
    p.add_argument("input", help="CSV file, rows = subjects, columns = referentials")
    p.add_argument("--header", action="store_true", help="first row holds column names")
    p.add_argument("--transpose", action="store_true", help="rows are referentials")
    p.add_argument("--direction", default=None,
                   help="comma list of high|low per column (single value broadcasts)")


def _add_common(p):
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--manifest", default=None, help="manifest path (default: <out>.manifest.json)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rankhc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rankhc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="rank-HC test of a data panel")
    _add_input(p)
    p.add_argument("--method", choices=("random-ties", "midrank-perm", "midrank-naive"), default="random-ties")
    p.add_argument("--grid", choices=(STANDARD, EXTENDED), default=STANDARD)
    p.add_argument("--k", type=int, default=None, help="grid resolution (default ceil(ln(n)^2))")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--table", default=None, help="null table file")
    p.add_argument("--table-dir", default=None, help="directory of cached null tables")
    p.add_argument("--auto-tabulate", action="store_true", help="build a missing table and cache it")
    p.add_argument("--mc-pq", type=int, default=DEFAULT_MC)
    p.add_argument("--mc-t", type=int, default=DEFAULT_MC)
    p.add_argument("--table-seed", type=int, default=0, help="seed of the cached table to use or build")
    p.add_argument("--B", type=int, default=DEFAULT_B, help="permutations per pass (midrank-perm)")
    p.add_argument("--subjects", action="store_true", help="include subject-level p-values")
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("tabulate", help="build a null table")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--grid", choices=(STANDARD, EXTENDED), default=STANDARD)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mc-pq", type=int, default=DEFAULT_MC)
    p.add_argument("--mc-t", type=int, default=DEFAULT_MC)
    p.add_argument("--table-dir", default=None, help="write into this cache directory instead of --out")
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="power experiments (CSV)")
    p.add_argument("--experiment", choices=("power", "grid", "stream"), default="power")
    p.add_argument("--setting", choices=SETTINGS, default="normal-shift")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--t", type=int, default=7)
    p.add_argument("--beta", type=float, default=0.85)
    p.add_argument("--sigma", type=float, default=None, help="convolution noise sd")
    p.add_argument("--n-anomalous", type=int, default=None)
    p.add_argument("--taus", type=_floats, default=[0.0, 0.5, 1.0, 1.5, 2.0])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--methods", default="rank", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--k", type=int, default=None, help="grid resolution for comparators")
    p.add_argument("--k-list", type=_ints, default=None, help="grid experiment resolutions")
    p.add_argument("--t-list", type=_ints, default=None, help="stream experiment lengths")
    p.add_argument("--table", default=None, help="null table for rank methods")
    p.add_argument("--grid", choices=(STANDARD, EXTENDED), default=EXTENDED,
                   help="grid of tables built on demand for the rank methods")
    p.add_argument("--mc-pq", type=int, default=10_000)
    p.add_argument("--mc-t", type=int, default=10_000)
    p.add_argument("--dist-mc", type=int, default=2000)
    p.add_argument("--perm-b", type=int, default=99)
    p.add_argument("--friedman-mc", type=int, default=999)
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("boundary", help="detection boundary curves (CSV)")
    p.add_argument("--betas", type=_floats, default=None, help="comma list (default 0.505..0.995)")
    p.add_argument("--sigmas", type=_floats, default=[0.0, 0.5, 1.0, 1.5, 2.0])
    _add_common(p)

    p = sub.add_parser("friedman", help="Monte-Carlo calibrated Friedman test")
    _add_input(p)
    p.add_argument("--mc", type=int, default=10_000)
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("dist-hc", help="distribution-aware HC on subject means")
    _add_input(p)
    p.add_argument("--family", choices=FAMILIES, default="normal")
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mc", type=int, default=10_000)
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("perm-hc", help="raw-data column-permutation HC")
    _add_input(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--B", type=int, default=DEFAULT_B)
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("fixtures", help="moment (b, c) and counterexample (d) fixture checks (JSON)")
    p.add_argument("--which", choices=("b", "c", "d", "all"), default="all")
    p.add_argument("--p", type=float, default=0.3, help="mixture weight for B")
    p.add_argument("--n", type=int, default=10, help="n for C and D")
    p.add_argument("--s", type=int, default=4, help="anomalous count for D")
    p.add_argument("--mc", type=int, default=100_000)
    _add_seed(p)
    _add_common(p)

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest")
    return ap


# ---------------------------------------------------------------------------


class CliError(RuntimeError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Fraction):
        return {"num": obj.numerator, "den": obj.denominator, "value": float(obj)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _emit(args, payload: str):
    if args.out:
        Path(args.out).write_text(payload)
    else:
        sys.stdout.write(payload)


def _emit_json(args, obj):
    _emit(args, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _emit_csv(args, rows, fields):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    _emit(args, buf.getvalue())


def _load(args):
    m = load_csv(args.input, has_header=args.header, transpose=args.transpose)
    if args.direction:
        m = apply_direction(m, args.direction)
    return m


def _resolve_table(args, m, grid):
    if args.table:
        return load_table(args.table, m.n, m.t, grid)
    if args.table_dir:
        d = Path(args.table_dir)
        path = d / table_filename(m.n, m.t, grid.kind, grid.k, args.mc_pq, args.mc_t, args.table_seed)
        if path.exists():
            return load_table(path, m.n, m.t, grid)
        if args.auto_tabulate:
            tab = tabulate_null(m.n, m.t, grid, args.mc_pq, args.mc_t, args.table_seed, args.threads)
            d.mkdir(parents=True, exist_ok=True)
            save_table(tab, path)
            return tab
    elif args.auto_tabulate:
        return tabulate_null(m.n, m.t, grid, args.mc_pq, args.mc_t, args.table_seed, args.threads)
    raise TableError(f"table missing for (n={m.n}, t={m.t}); pass --table, or --table-dir with "
                     "--auto-tabulate")


def cmd_test(args):
    m = _load(args)
    grid = make_grid(args.grid, m.n, m.t, args.k)
    if args.method == "midrank-perm":
        res = test_midrank_permutation(m, grid, args.B, args.seed, args.subjects, args.threads)
    else:
        table = _resolve_table(args, m, grid)
        if args.method == "random-ties":
            res = test_random_ties(m, table, args.seed, args.subjects)
        else:
            res = test_midrank_naive(m, table, args.subjects)
    out = res.to_json()
    out.update({"alpha": args.alpha, "reject": bool(res.p_value <= args.alpha), "n": m.n, "t": m.t})
    _emit_json(args, out)


def cmd_tabulate(args):
    grid = make_grid(args.grid, args.n, args.t, args.k)
    tab = tabulate_null(args.n, args.t, grid, args.mc_pq, args.mc_t, args.seed, args.threads)
    if args.table_dir:
        d = Path(args.table_dir)
        d.mkdir(parents=True, exist_ok=True)
        path = save_table(tab, d / table_filename(args.n, args.t, grid.kind, grid.k, args.mc_pq,
                                                  args.mc_t, args.seed))
        sys.stdout.write(json.dumps({"path": str(path), "checksum": tab.checksum()}) + "\n")
    elif args.out:
        save_table(tab, args.out)
    else:
        sys.stdout.write(json.dumps(tab.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def cmd_simulate(args):
    methods = tuple(s.strip() for s in args.methods.split(",") if s.strip())
    base = SignalSpec(args.setting, 0.0, args.beta, args.n, args.t, args.sigma, args.n_anomalous)
    cfg = MethodConfig(args.dist_mc, args.perm_b, args.friedman_mc, args.seed)
    mc = (args.mc_pq, args.mc_t)
    tables = {}
    if args.table:
        tab = load_table(args.table)
        tables[(tab.n, tab.t)] = tab
    if args.experiment == "power":
        curves = power_experiment(base, args.taus, args.alpha, args.trials, methods, args.seed, tables,
                                  cfg, args.k, tabulate=True, table_mc=mc, grid_kind=args.grid)
    elif args.experiment == "grid":
        ks = args.k_list or [default_k(args.n), 2 * default_k(args.n)]
        curves = {f"rank-k{k}": c for k, c in
                  grid_experiment(base, ks, args.taus, args.alpha, args.trials, args.seed,
                                  kind=args.grid, table_mc=mc).items()}
    else:
        ts = args.t_list or [1, 2, 5, 10, 20]
        s = args.n_anomalous or base.size
        curves = {}
        for tau in args.taus:
            for t, c in stream_length_experiment(args.n, s, tau, ts, args.trials, args.seed, args.setting,
                                                 alpha=args.alpha, table_mc=mc,
                                                 grid_kind=args.grid).items():
                key = f"rank-t{t}"
                if key in curves:
                    curves[key].rows.extend(c.rows)
                    curves[key].outcomes.extend(c.outcomes)
                else:
                    curves[key] = c
    _emit_csv(args, curves_to_rows(curves), CSV_FIELDS)


def cmd_boundary(args):
    betas = args.betas or [round(0.505 + 0.01 * i, 3) for i in range(50)]
    rows = []
    for s in args.sigmas:
        for b in betas:
            rows.append({"beta": b, "sigma": s, "rho": rho(b, s), "rho_tilde": rho_tilde(b, s)})
    _emit_csv(args, rows, ("beta", "sigma", "rho", "rho_tilde"))


def cmd_friedman(args):
    res = friedman_test(_load(args), args.mc, args.seed, args.threads)
    _emit_json(args, res.to_json())


def cmd_dist_hc(args):
    res = dist_aware_hc(_load(args), OracleNullSpec(args.family, args.mu0, args.sigma0), args.k,
                        args.mc, args.seed)
    _emit_json(args, res.to_json())


def cmd_perm_hc(args):
    res = raw_permutation_hc(_load(args), args.k, args.B, args.seed, args.threads)
    _emit_json(args, res.to_json())


def cmd_fixtures(args):
    out = {}
    if args.which in ("b", "all"):
        null, anom, (eu, eu2) = appendix_b_samplers(args.p)
        ch = anomaly_characteristics(null, anom, 1, args.mc, args.seed)
        out["B"] = {"p": args.p, "EU": float(ch.eu[0]), "EU_se": float(ch.eu_se[0]), "EU_exact": eu,
                    "EU2": float(ch.eu2[0]), "EU2_se": float(ch.eu2_se[0]), "EU2_exact": eu2,
                    "sigma_sq": ch.sigma_sq}
    if args.which in ("c", "all"):
        null, anom, (eu, eu2) = appendix_c_samplers(args.n)
        ch = anomaly_characteristics(null, anom, 1, args.mc, args.seed)
        out["C"] = {"n": args.n, "EU": float(ch.eu[0]), "EU_se": float(ch.eu_se[0]), "EU_exact": eu,
                    "EU2": float(ch.eu2[0]), "EU2_se": float(ch.eu2_se[0]), "EU2_exact": eu2,
                    "mu": ch.mu}
    if args.which in ("d", "all"):
        f = appendix_d_fixture(args.n, args.s, args.seed)
        out["D"] = {k: f[k] for k in ("n", "s", "t", "q_stated", "q_effective", "stated", "effective")}
    _emit_json(args, out)


COMMANDS = {
    "test": cmd_test, "tabulate": cmd_tabulate, "simulate": cmd_simulate, "boundary": cmd_boundary,
    "friedman": cmd_friedman, "dist-hc": cmd_dist_hc, "perm-hc": cmd_perm_hc, "fixtures": cmd_fixtures,
}


def _resolved_argv(argv: list[str], seed: int | None) -> list[str]:
    out = [a for a in argv if a != "--random-seed"]
    if seed is not None and "--seed" not in out:
        out += ["--seed", str(seed)]
    return out


def _manifest_path(args):
    if args.manifest:
        return Path(args.manifest)
    if args.out:
        return Path(str(args.out) + ".manifest.json")
    return Path(f"rankhc-{args.command}.manifest.json")


def run(argv: list[str]) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "replay":
        obj = json.loads(Path(args.manifest).read_text())
        return run(list(obj["argv"]))
    if args.command in RANDOMIZED:
        if args.random_seed:
            args.seed = fresh_seed()
        elif args.seed is None:
            ap.error(f"{args.command}: --seed or --random-seed is required")
    seed = getattr(args, "seed", None)
    started = time.time()
    COMMANDS[args.command](args)
    manifest = {
        "tool": "rankhc", "version": __version__, "command": args.command,
        "argv": _resolved_argv(argv, seed), "seed": seed,
        "options": {k: v for k, v in vars(args).items() if k not in ("random_seed",)},
        "numpy": np.__version__, "wall_clock": {"started": started, "seconds": time.time() - started},
    }
    _manifest_path(args).write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True, default=str))
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except SystemExit:
        raise
    except Exception as exc:  # every module error becomes machine-readable output
        sys.stdout.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
