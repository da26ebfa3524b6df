"""Command-line front end.

Point data are comma-separated CSV (one observation per row); models and
reports are JSON.  Exit status: 0 success, 2 bad input, 3 numerical
failure, 4 duplicate data points.
"""

import argparse
import json
import sys

import numpy as np

from . import gof, maps, synthetic
from .potential import DuplicateSitesError
from .reference import KINDS, ReferenceMeasure
from .solver import BACKENDS, FittedTransport, SolverConfig, fit

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_DUPLICATE = 4


class InputError(ValueError):
    """Malformed input files or arguments."""


def read_csv(path, header=False):
    """Read a numeric CSV into an ``(n, d)`` float array."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1 if header else 0,
                          dtype=np.float64, encoding="utf-8")
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if data.size == 0:
        raise InputError(f"{path} holds no data")
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path} contains non-finite values")
    return data


def write_csv(path, rows, names=None):
    """Write rows with 17 significant digits, to stdout when ``path`` is None."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    head = ",".join(names) if names else ""
    if path is None:
        np.savetxt(sys.stdout, rows, fmt="%.17g", delimiter=",", header=head, comments="")
    else:
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=head, comments="",
                   encoding="utf-8")


def write_text(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def load_model(path):
    try:
        return FittedTransport.load(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot load model {path}: {exc}") from None


def _columns(prefix, d):
    return [f"{prefix}{k + 1}" for k in range(d)]


def cmd_fit(args):
    X = read_csv(args.input, args.header)
    reference = ReferenceMeasure(args.reference, X.shape[1])
    config = SolverConfig(backend=args.backend, tol=args.tol, M=args.mc_size, seed=args.seed,
                          max_iter=args.max_iter)
    fitted = fit(X, reference, config)
    fitted.save(args.out)
    print(f"residual {fitted.residual!r} iterations {fitted.iterations}")
    return EXIT_OK


def _queries(args, d):
    if args.query is not None:
        Q = read_csv(args.query, args.header)
        if Q.shape[1] != d:
            raise InputError(f"queries have {Q.shape[1]} columns, the model has d={d}")
        return Q, None
    if getattr(args, "grid", None) is not None:
        if d != 2:
            raise InputError("--grid needs a 2-d model")
        G = args.grid
        if G < 2:
            raise InputError("--grid needs at least 2 points per side")
        x0, x1, y0, y1 = args.bounds
        gx, gy = np.meshgrid(np.linspace(x0, x1, G), np.linspace(y0, y1, G))
        lattice = np.column_stack([gx.ravel(), gy.ravel()])
        return lattice, lattice
    raise InputError("give --query or --grid")


def cmd_rank(args):
    fitted = load_model(args.model)
    Q, lattice = _queries(args, fitted.d)
    R = maps.rank(fitted, Q, mode=args.mode)
    rows = R if lattice is None else np.column_stack([lattice, R])
    names = _columns("r", fitted.d) if lattice is None else ["x", "y", "r1", "r2"]
    write_csv(args.out, rows, names if args.write_header else None)
    return EXIT_OK


def cmd_quantile(args):
    fitted = load_model(args.model)
    U = read_csv(args.query, args.header)
    if U.shape[1] != fitted.d:
        raise InputError(f"queries have {U.shape[1]} columns, the model has d={fitted.d}")
    try:
        Q = maps.quantile(fitted, U)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_csv(args.out, Q, _columns("x", fitted.d) if args.write_header else None)
    return EXIT_OK


def cmd_depth(args):
    fitted = load_model(args.model)
    if not fitted.reference.is_cube:
        raise InputError("depth needs a model fitted with the cube reference")
    Q, lattice = _queries(args, fitted.d)
    D = np.atleast_1d(maps.depth(fitted, Q, mode=args.mode))
    if lattice is None:
        write_csv(args.out, D[:, None], ["depth"] if args.write_header else None)
    else:
        write_csv(args.out, np.column_stack([lattice, D]),
                  ["x", "y", "depth"] if args.write_header else None)
    if args.figure:
        from .plotting import plot_depth_grid

        if lattice is None:
            raise InputError("--figure needs --grid")
        plot_depth_grid(lattice[:, 0], lattice[:, 1], D, args.figure, data=fitted.sites)
    return EXIT_OK


def cmd_test2s(args):
    X = read_csv(args.x, args.header)
    Y = read_csv(args.y, args.header)
    if X.shape[1] != Y.shape[1]:
        raise InputError("the two samples have different dimensions")
    report = gof.two_sample_test(X, Y, B=args.perms, mc_count=args.mc, seed=args.seed,
                                 mc_seed=args.mc_seed, perm_seed=args.perm_seed,
                                 exact=args.exact2d)
    write_text(args.out, report.to_json())
    print(f"T {report.statistic!r} p-value {report.p_value!r}",
          file=sys.stderr if args.out is None else sys.stdout)
    if args.figure:
        from .plotting import plot_replicates

        plot_replicates(report.statistic, report.replicates, args.figure)
    return EXIT_OK


def cmd_testindep(args):
    Z = read_csv(args.input, args.header)
    try:
        split = gof.parse_split(args.split, Z.shape[1])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report = gof.independence_test(Z, split, B=args.perms, seed=args.seed,
                                   perm_seed=args.perm_seed)
    write_text(args.out, report.to_json())
    print(f"T {report.statistic!r} p-value {report.p_value!r}",
          file=sys.stderr if args.out is None else sys.stdout)
    if args.figure:
        from .plotting import plot_replicates

        plot_replicates(report.statistic, report.replicates, args.figure)
    return EXIT_OK


def cmd_synth(args):
    if args.n < 1:
        raise InputError("--n must be at least 1")
    data = synthetic.generate(args.family, args.n, args.seed)
    write_csv(args.out, data, _columns("x", data.shape[1]) if args.write_header else None)
    return EXIT_OK


def cmd_cells(args):
    fitted = load_model(args.model)
    if not (fitted.reference.is_cube and fitted.d == 2):
        raise InputError("cells need a 2-d model with the unit-square reference")
    geom = fitted.geometry
    cells = [{"site": i, "point": fitted.sites[i].tolist(),
              "vertices": geom.polygon(i).tolist(), "area": float(geom.area[i])}
             for i in range(fitted.n)]
    write_text(args.out, json.dumps({"version": 1, "cells": cells}) + "\n")
    if args.figure:
        from .plotting import plot_cells

        plot_cells([c["vertices"] for c in cells], args.figure, sites=fitted.sites)
    return EXIT_OK


def cmd_harness(args):
    def progress(setting, r):
        if args.verbose:
            print(f"setting {setting} replication {r + 1}/{args.replications}", file=sys.stderr,
                  flush=True)

    report = gof.null_harness(tuple(args.settings.split(",")), n=args.n,
                              replications=args.replications, mc_count=args.mc,
                              seed=args.seed, progress=progress)
    write_text(args.out, report.to_json())
    print(f"KS {report.ks_statistic!r} p-value {report.p_value!r}",
          file=sys.stderr if args.out is None else sys.stdout)
    if args.figure:
        from .plotting import plot_qq

        a, b = report.settings[:2]
        plot_qq(report.qq[a], report.qq[b], args.figure, labels=(f"setting {a}", f"setting {b}"))
    return EXIT_OK


def _bounds(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad bounds {text!r}") from None
    if len(vals) != 4 or not (vals[0] < vals[1] and vals[2] < vals[3]):
        raise argparse.ArgumentTypeError("bounds are xmin,xmax,ymin,ymax")
    return vals


def build_parser():
    p = argparse.ArgumentParser(
        prog="otranks", description="Multivariate ranks, quantiles and rank-based tests.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output file (default stdout)"):
        sp.add_argument("--header", action="store_true", help="input CSVs start with a header")
        sp.add_argument("--write-header", action="store_true", help="write a CSV header line")
        sp.add_argument("--out", default=None, help=out_help)

    sp = sub.add_parser("fit", help="fit the transport potential of a sample")
    sp.add_argument("--input", required=True)
    sp.add_argument("--reference", choices=KINDS, default="cube")
    sp.add_argument("--backend", choices=BACKENDS, default="auto")
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--mc-size", type=int, default=None)
    sp.add_argument("--max-iter", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_fit, out_required=True)

    for name, func, helptext in (("rank", cmd_rank, "ranks of query points"),
                                 ("depth", cmd_depth, "depth of query points")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--model", required=True)
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--query")
        src.add_argument("--grid", type=int, help="G x G lattice (2-d models)")
        sp.add_argument("--bounds", type=_bounds, default=[0.0, 1.0, 0.0, 1.0],
                        help="lattice extent xmin,xmax,ymin,ymax")
        sp.add_argument("--mode", default="auto",
                        choices=("auto", "vertex", "exact2d-vertex", "optimize"))
        sp.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
        if name == "depth":
            sp.add_argument("--figure", default=None, help="write a depth plot (needs --grid)")
        common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("quantile", help="quantiles of reference points")
    sp.add_argument("--model", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    common(sp)
    sp.set_defaults(func=cmd_quantile)

    sp = sub.add_parser("test2s", help="permutation two-sample test")
    sp.add_argument("--x", required=True)
    sp.add_argument("--y", required=True)
    sp.add_argument("--mc", type=int, default=gof.DEFAULT_MC)
    sp.add_argument("--perms", type=int, default=99)
    sp.add_argument("--seed", type=int, default=0, help="rank seed; default for the others")
    sp.add_argument("--mc-seed", type=int, default=None)
    sp.add_argument("--perm-seed", type=int, default=None)
    sp.add_argument("--exact2d", action="store_true", help="exact cell-overlap evaluation")
    sp.add_argument("--figure", default=None, help="write a replicate histogram")
    common(sp, "report JSON (default stdout)")
    sp.set_defaults(func=cmd_test2s)

    sp = sub.add_parser("testindep", help="permutation test of mutual independence")
    sp.add_argument("--input", required=True)
    sp.add_argument("--split", required=True, help="block sizes, e.g. 1,1")
    sp.add_argument("--perms", type=int, default=99)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--perm-seed", type=int, default=None)
    sp.add_argument("--figure", default=None, help="write a replicate histogram")
    common(sp, "report JSON (default stdout)")
    sp.set_defaults(func=cmd_testindep)

    sp = sub.add_parser("synth", help="draw a simulation sample")
    sp.add_argument("family", choices=synthetic.FAMILIES)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("cells", help="cell polygons of a 2-d model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    sp.add_argument("--figure", default=None, help="write a cell plot")
    common(sp, "polygons JSON (default stdout)")
    sp.set_defaults(func=cmd_cells)

    sp = sub.add_parser("harness", help="null replications of the normalised two-sample statistic")
    sp.add_argument("--settings", default="i,iii")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--replications", type=int, default=200)
    sp.add_argument("--mc", type=int, default=gof.DEFAULT_MC)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--figure", default=None, help="write the QQ plot")
    sp.add_argument("--verbose", action="store_true")
    common(sp, "report JSON (default stdout)")
    sp.set_defaults(func=cmd_harness)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "out_required", False) and args.out is None:
        print("otranks: error: --out is required", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except DuplicateSitesError as exc:
        print(f"otranks: duplicate points: {exc}", file=sys.stderr)
        return EXIT_DUPLICATE
    except (InputError, OSError) as exc:
        print(f"otranks: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"otranks: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, RuntimeError) as exc:
        print(f"otranks: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
