"""Command-line front end: ``cbilab <command> --model model.json [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import coefficients, harness, moments, simulate
from .errors import CBILabError, ParseError, ValidationError
from .model import load_model, parse_model, validate

DEFAULT_SEED = 42
COMMANDS = ("validate", "classify", "coeffs", "mean", "simulate", "limit", "converge")

# per-command defaults for the shared numeric flags
DEFAULTS = {
    "mean": {"T": 10.0, "dt": 0.1},
    "simulate": {"T": 10.0, "dt": 0.01, "paths": 5},
    "limit": {"T": 1.0, "dt": 1e-3, "paths": 5},
    "converge": {"t": 1.0, "paths": 2000, "q": 1},
}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _n_grid(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --n-grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbilab", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--T", type=float, dest="T")
    p.add_argument("--dt", type=float)
    p.add_argument("--n-grid", type=_n_grid, default=list(harness.DEFAULT_N_GRID))
    p.add_argument("--paths", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--q", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args):
    for key, val in DEFAULTS.get(args.command, {}).items():
        if getattr(args, key) is None:
            setattr(args, key, val)
    if not 0 <= args.seed < 2**64:
        raise SystemExit("--seed must be an unsigned 64-bit integer")
    return args


def _write_meta(path: Path, args, doc: dict, **extra):
    meta = {"command": args.command, "seed": args.seed, "model_file": str(args.model),
            "model": doc, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    meta.update(extra)
    path.write_text(json.dumps(meta, indent=2) + "\n")


def _raw_doc(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_validate(args, out):
    model = validate(parse_model(args.model))
    print(f"valid: d = {model.d}")


def cmd_classify(args, out):
    model = load_model(args.model)
    Bt = coefficients.effective_branching(model)
    cls = moments.classify_matrix(Bt)
    summ = coefficients.perron(Bt)
    print(cls.regime.value)
    print(f"s = {summ.s:.12g}")
    print("u = (" + ", ".join(f"{x:.12g}" for x in summ.u) + ")")
    print("v = (" + ", ".join(f"{x:.12g}" for x in summ.v) + ")")
    print(json.dumps(summ.to_dict(), indent=2))


def cmd_coeffs(args, out):
    coef = coefficients.derive(load_model(args.model))
    print(json.dumps(coef.to_dict(), indent=2))


def cmd_mean(args, out):
    model = load_model(args.model)
    n = simulate.step_count(args.T, args.dt)
    times = np.arange(n + 1) * args.dt
    path = out / "mean.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"EX_{i + 1}" for i in range(model.d)])
        for t in times:
            w.writerow([_fmt(t)] + [_fmt(x) for x in moments.mean_at(model, float(t))])
    print(path)


def cmd_simulate(args, out):
    model = load_model(args.model)
    ens = simulate.simulate_cbi_ensemble(model, args.T, args.dt, args.paths, args.seed)
    path = out / "paths.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(model.d)] + ["path_id"])
        for i in range(ens.n_paths):
            for t, x in zip(ens.times, ens.states[:, i]):
                w.writerow([_fmt(t)] + [_fmt(v) for v in x] + [i])
    _write_meta(out / "paths_meta.json", args, _raw_doc(args.model),
                T=args.T, dt=args.dt, paths=args.paths, scheme=ens.scheme)
    print(path)


def cmd_limit(args, out):
    coef = coefficients.derive(load_model(args.model))
    ens = simulate.simulate_limit_ensemble(coef.a, coef.b, args.T, args.dt, args.paths, args.seed)
    path = out / "limit.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "path_id"])
        for i in range(ens.n_paths):
            for t, x in zip(ens.times, ens.states[:, i, 0]):
                w.writerow([_fmt(t), _fmt(x), i])
    _write_meta(out / "limit_meta.json", args, _raw_doc(args.model), T=args.T, dt=args.dt,
                paths=args.paths, a=coef.a, b=coef.b, scheme=ens.scheme)
    print(path)


def cmd_converge(args, out):
    model = load_model(args.model)
    rep = harness.run_convergence(model, args.n_grid, args.t, args.paths, args.seed, args.q)
    for p in harness.write_report(rep, out):
        print(p)


HANDLERS = {
    "validate": cmd_validate,
    "classify": cmd_classify,
    "coeffs": cmd_coeffs,
    "mean": cmd_mean,
    "simulate": cmd_simulate,
    "limit": cmd_limit,
    "converge": cmd_converge,
}


def dispatch(args) -> int:
    """Run one command; returns the process exit status."""
    args = _resolve(args)
    try:
        out = Path(args.out)
        if args.command in ("mean", "simulate", "limit", "converge"):
            out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](args, out)
    except (ValidationError, ParseError) as exc:
        print(f"{_where(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (CBILabError, OSError, ValueError) as exc:
        print(f"{_where(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def _where(exc) -> str:
    tb = exc.__traceback__
    mod = "cli"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("cbilab."):
            mod = name.split(".", 1)[1]
        tb = tb.tb_next
    return mod


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
