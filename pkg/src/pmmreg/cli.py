"""Command-line front end.

    pmmreg simulate --n 400 --p 2000 --k 26 --out data/run0
    pmmreg fit data/run0 --method pmm --penalty mcp
    pmmreg bench --method both --n 400 --p 2000 --k 26 --kappa 0.3 --reps 20
    pmmreg sweep --axis K --reps 10
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields

import numpy as np

from . import metrics
from .dataio import CapacityError, ParseError, load_libsvm, metadata_json, polynomial_expand
from .fitting import fit, rescore
from .pdasc import ConvergenceError, SolverError, write_path_csv
from .penalty import DEFAULT_TAU, PenaltyDomainError
from .pmm import PmmConfig
from .simgen import SimDesign, dump, load_dump, simulate

log = logging.getLogger("pmmreg")

EXIT_OK, EXIT_UNCONVERGED, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4

# grids of the parameter-influence study; every other parameter at its base value
SWEEP_BASE = {"n": 200, "p": 1000, "K": 10, "kappa": 0.2, "sigma1": 0.1, "tau": 2.7}
SWEEP_AXES = {
    "n": ({"K": 10}, [20 * i for i in range(1, 11)]),
    "p": ({"n": 200, "K": 50}, [500, 600, 700, 800, 900, 1000]),
    "K": ({}, [10, 20, 30, 40, 50]),
    "kappa": ({"K": 40}, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]),
    "sigma1": ({}, [0.1, 0.5, 1.0, 1.5, 2.0, 2.5]),
    "tau": ({}, [1.1, 2.7, 5.0, 10.0]),
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _add_common(sp, design=True, reps=False, methods=("pmm", "cd")):
    sp.add_argument("--method", choices=list(methods), default="pmm")
    sp.add_argument("--penalty", choices=["mcp", "scad"], default="mcp")
    sp.add_argument("--tau", type=float, default=None,
                    help="concavity (default 2.7 for MCP, 3.7 for SCAD)")
    sp.add_argument("--lambda", dest="lam", type=float, default=None,
                    help="fixed lambda; skips HBIC selection")
    sp.add_argument("--tol-inner", type=float, default=1e-6)
    sp.add_argument("--tol-outer", type=float, default=1e-6)
    sp.add_argument("--no-standardize", action="store_true",
                    help="fit on raw columns instead of unit-norm columns")
    sp.add_argument("--out", default=None)
    sp.add_argument("--no-timing", action="store_true",
                    help="blank out wall-time fields for byte-stable output")
    sp.add_argument("--config", default=None, help="JSON file with option defaults")
    sp.add_argument("-v", "--verbose", action="store_true")
    if design:
        sp.add_argument("--n", type=int, default=400)
        sp.add_argument("--p", type=int, default=2000)
        sp.add_argument("--k", dest="K", type=int, default=26)
        sp.add_argument("--kappa", type=float, default=0.3)
        sp.add_argument("--sigma1", type=float, default=0.1, help="noise standard deviation")
        sp.add_argument("--ratio", dest="R", type=float, default=100.0,
                        help="upper bound R of the coefficient magnitudes U[1, R]")
        sp.add_argument("--sign-mode", choices=["random", "positive"], default="random")
        sp.add_argument("--seed", type=int, default=0)
    if reps:
        sp.add_argument("--reps", type=int, default=20)
        sp.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmmreg",
                                 description="MCP/SCAD regression by PMM or coordinate descent")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="write a synthetic problem to disk")
    _add_common(sp)
    sp.add_argument("--rep", type=int, default=0)

    for name, hlp in (("fit", "fit one problem, print the result JSON"),
                      ("path", "fit one problem, write the lambda path CSV")):
        sp = sub.add_parser(name, help=hlp)
        _add_common(sp)
        sp.add_argument("dataset", nargs="?", default=None,
                        help="LIBSVM file or simulate prefix; omitted means simulate")
        sp.add_argument("--rep", type=int, default=0)
        sp.add_argument("--poly-order", type=int, default=1)
        sp.add_argument("--trace", default=None, help="write the outer-iteration CSV here")
        sp.add_argument("--json", dest="json_out", default=None,
                        help="path command: also write the result JSON here")

    sp = sub.add_parser("bench", help="replicated simulate/fit/score, summary CSV")
    _add_common(sp, reps=True, methods=("pmm", "cd", "both"))

    sp = sub.add_parser("sweep", help="discovery rates along one model parameter")
    _add_common(sp, reps=True)
    sp.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    sp.add_argument("--values", default=None,
                    help="comma-separated axis values (default: the standard grid)")
    sp.set_defaults(reps=10)
    return ap


def _config_defaults(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return {}
    try:
        with open(known.config) as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read config {known.config}: {exc}", EXIT_IO) from exc
    if not isinstance(cfg, dict):
        raise CliError("config file must hold a JSON object")
    return cfg


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    cfg = _config_defaults(argv)
    ap = build_parser()
    pmm_cfg = cfg.pop("pmm", {})
    design_cfg = cfg.pop("design", {})
    flat = {**{("K" if k in ("k", "K") else k): v for k, v in design_cfg.items()}, **cfg}
    if "sigma1_noise" in flat:
        flat["sigma1"] = flat.pop("sigma1_noise")
    for sp in ap._subparsers._group_actions[0].choices.values():
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in flat.items()
                           if k.replace("-", "_") in dests})
    args = ap.parse_args(argv)
    args.pmm = pmm_cfg
    return args


def _pmm_config(args) -> PmmConfig:
    known = {f.name for f in fields(PmmConfig)} - {"grid"}
    extra = {k: v for k, v in args.pmm.items() if k in known}
    unknown = set(args.pmm) - known
    if unknown:
        raise CliError(f"unknown pmm config keys: {sorted(unknown)}")
    extra.setdefault("tol_inner", args.tol_inner)
    extra.setdefault("tol_outer", args.tol_outer)
    return PmmConfig(**extra)


def _design(args, **over) -> SimDesign:
    kw = dict(n=args.n, p=args.p, K=args.K, kappa=args.kappa, sigma1_noise=args.sigma1,
              R=args.R, seed=args.seed, sign_mode=args.sign_mode, rep=getattr(args, "rep", 0))
    kw.update(over)
    return SimDesign(**kw)


def _tau(penalty, tau):
    return DEFAULT_TAU[penalty] if tau is None else tau


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    design = _design(args)
    if args.out is None:
        raise CliError("simulate needs --out PREFIX")
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    ds, truth = simulate(design)
    paths = dump(design, ds, truth, args.out)
    print(json.dumps({"files": paths, "design": asdict(design)}, indent=2))
    return EXIT_OK


def _load(args):
    """Dataset and, for synthetic problems, the ground truth."""
    path = args.dataset
    if path is None:
        ds, truth = simulate(_design(args))
        return ds, truth
    prefix = path[:-5] if path.endswith(".json") else path
    if os.path.exists(prefix + ".X.bin"):
        ds, truth, _ = load_dump(prefix)
        return ds, truth
    if not os.path.exists(path):
        raise CliError(f"dataset not found: {path}", EXIT_IO)
    ds = load_libsvm(path)
    if args.poly_order > 1:
        ds = polynomial_expand(ds, args.poly_order)
    log.info("dataset %s", metadata_json(ds))
    return ds, None


def cmd_fit(args, write_path=False) -> int:
    ds, truth = _load(args)
    res, trace = fit(ds, args.method, args.penalty, _tau(args.penalty, args.tau), args.lam,
                     _pmm_config(args), scale=not args.no_standardize)
    body = res.to_dict(timing=not args.no_timing)
    body["rescored_r2_kkt"] = rescore(res, ds)
    if truth is not None:
        body["support_matches_truth"] = bool(
            np.array_equal(res.active_set, np.flatnonzero(truth.beta_star)))
    text = json.dumps(body, indent=2) + "\n"
    if args.trace:
        trace.to_csv(args.trace)
    if write_path:
        entries = res.extra.get("path")
        if entries is None:
            raise CliError("no path to write: --lambda was given")
        if args.out is None:
            write_path_csv(entries, sys.stdout)
        else:
            write_path_csv(entries, args.out)
        if args.json_out:
            _emit(text, args.json_out)
    else:
        _emit(text, args.out)
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def _replicate(job):
    """One simulate/fit/score replication; runs in a worker process."""
    design, method, penalty, tau, lam, config, scale = job
    ds, truth = simulate(design)
    try:
        res, trace = fit(ds, method, penalty, tau, lam, config, scale=scale)
    except (ConvergenceError, SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return {"rep": design.rep, "error": f"{type(exc).__name__}: {exc}"}
    return {"rep": design.rep, "beta": res.beta, "truth": truth, "seconds": res.seconds,
            "converged": res.converged, "stage2_iters": res.stage2_iters,
            "violations": res.extra.get("descent_violations", 0)}


def run_replications(jobs, n_jobs=1):
    """Results in submission order whatever the worker count."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_replicate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_replicate, jobs))


def _summarise(outs, timing, **labels):
    records, failures = [], 0
    for o in outs:
        if "error" in o:
            log.warning("replication %d failed: %s", o["rep"], o["error"])
            failures += 1
            continue
        if not o["converged"]:
            log.warning("replication %d did not converge", o["rep"])
        records.append(metrics.ReplicationRecord(o["beta"], o["truth"], o["seconds"]))
    return metrics.summary_row(records, failures, timing=timing, **labels)


def _all_good(outs):
    return all("error" not in o and o["converged"] for o in outs)


def _bench_rows(design, methods, args, config, tau):
    rows, ok, times = [], True, {}
    for method in methods:
        jobs = [(design.replicate(r), method, args.penalty, tau, args.lam, config,
                 not args.no_standardize) for r in range(args.reps)]
        outs = run_replications(jobs, args.jobs)
        ok &= _all_good(outs)
        times[method] = [o.get("seconds", math.nan) for o in outs]
        rows.append(_summarise(outs, not args.no_timing, method=method, penalty=args.penalty,
                               n=design.n, p=design.p, K=design.K, kappa=design.kappa,
                               sigma1=design.sigma1_noise, tau=tau))
    return rows, ok, times


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise CliError("--reps must be at least 1")
    design = _design(args, rep=0)
    tau = _tau(args.penalty, args.tau)
    methods = ["pmm", "cd"] if args.method == "both" else [args.method]
    rows, ok, times = _bench_rows(design, methods, args, _pmm_config(args), tau)
    if args.out is None:
        metrics.write_summary_csv(rows, sys.stdout)
    else:
        metrics.write_summary_csv(rows, args.out)
    if len(methods) == 2 and not args.no_timing:
        a, b = np.array(times["pmm"]), np.array(times["cd"])
        sys.stderr.write(f"time ratio pmm:cd = {np.nanmean(a) / np.nanmean(b):.3f}; "
                         f"pmm faster in {int(np.sum(a < b))}/{a.size} replications\n")
    return EXIT_OK if ok else EXIT_UNCONVERGED


def sweep_points(axis, values=None):
    """Design overrides for each point of a sweep along ``axis``."""
    fixed, grid = SWEEP_AXES[axis]
    if values is not None:
        grid = values
    base = {**SWEEP_BASE, **fixed}
    return [{**base, axis: v} for v in grid]


def cmd_sweep(args) -> int:
    values = None
    if args.values:
        conv = int if args.axis in ("n", "p", "K") else float
        try:
            values = [conv(v) for v in args.values.split(",")]
        except ValueError as exc:
            raise CliError(f"bad --values: {exc}") from exc
    config = _pmm_config(args)
    rows, ok = [], True
    for pt in sweep_points(args.axis, values):
        design = _design(args, n=pt["n"], p=pt["p"], K=pt["K"], kappa=pt["kappa"],
                         sigma1_noise=pt["sigma1"], rep=0)
        sub_args = argparse.Namespace(**{**vars(args), "penalty": "mcp"})
        r, good, _ = _bench_rows(design, ["pmm", "cd"], sub_args, config, float(pt["tau"]))
        for row in r:
            row["axis"], row["value"] = args.axis, pt[args.axis]
        rows.extend(r)
        ok &= good
    cols = ["axis", "value"] + metrics.SUMMARY_COLUMNS
    if args.out is None:
        metrics.write_summary_csv(rows, sys.stdout, cols)
    else:
        metrics.write_summary_csv(rows, args.out, cols)
    return EXIT_OK if ok else EXIT_UNCONVERGED


def _error_body(exc, code):
    sys.stdout.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        return _error_body(exc, exc.code)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "bench": cmd_bench,
                "sweep": cmd_sweep, "path": lambda a: cmd_fit(a, write_path=True)}
    try:
        return handlers[args.command](args)
    except CliError as exc:
        return _error_body(exc, exc.code)
    except (ParseError, CapacityError, PenaltyDomainError, ValueError) as exc:
        return _error_body(exc, EXIT_USAGE)
    except (ConvergenceError, SolverError, ArithmeticError) as exc:
        return _error_body(exc, EXIT_SOLVER)
    except OSError as exc:
        return _error_body(exc, EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
