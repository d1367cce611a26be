"""Command-line entry point: ``lattice-topo <command> ...``.

Exit codes: 0 success, 2 bad input or contract violation, 3 numerical
failure.  Errors are printed to stderr as one JSON object.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import plots
from .diagrams import DegenerateHullError, convex_peel, distance_matrix
from .grid import detrend_polynomial, empirical_correlation, load_field, marginal_gaussianize, save_field, split_subsets
from .homology import (
    FeatureKind,
    Neighborhood,
    betti_curve,
    cumulative_count_curve,
    diagrams_to_csv,
    parse_diagram_csv,
    sublevel_components,
    sublevel_holes,
)
from .inference import compare_fields, gof_grf, summary_battery
from .models import ModelId, ModelSpec, simulate_model
from .mvn import NotPositiveSemidefinite
from .theory import DEFAULT_DELTA0, CorrelationModel, extrema_moments

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def threads_from(args):
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("LATTICE_TOPO_THREADS")
    return max(1, int(env)) if env else 1


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _prepare(args, path):
    fld = load_field(path)
    if not args.no_detrend:
        fld = detrend_polynomial(fld, args.degree)
    if not args.no_gaussianize:
        fld = marginal_gaussianize(fld)
    return fld


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    spec = ModelSpec.default(args.model)
    if args.nu is not None or args.eta is not None:
        nu = args.nu if args.nu is not None else spec.underlying.nu
        eta = args.eta if args.eta is not None else spec.underlying.eta
        spec = spec.with_parameters(nu, eta)
    fld = simulate_model(args.dim, spec, args.seed, margins=args.margins)
    out = save_field(fld, args.output, args.format)
    meta = {"seed": args.seed, "dim": args.dim, "margins": args.margins, "clipped": fld.meta["clipped"],
            **spec.to_dict()}
    Path(str(out) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _dump(meta)
    return EXIT_OK


def cmd_analyze(args):
    fld = _prepare(args, args.input)
    nbhd = Neighborhood.parse(args.nbhd)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    if threads_from(args) > 1:
        with ThreadPoolExecutor(2) as ex:
            fc = ex.submit(sublevel_components, fld, nbhd)
            fh = ex.submit(sublevel_holes, fld, nbhd)
            comps, holes = fc.result(), fh.result()
    else:
        comps, holes = sublevel_components(fld, nbhd), sublevel_holes(fld, nbhd)
    (outdir / "diagrams.csv").write_text(diagrams_to_csv(comps, holes))
    betti = betti_curve(fld, nbhd, components=comps, holes=holes)
    (outdir / "betti.csv").write_text(betti.to_csv())
    for name, dg in (("components", comps), ("holes", holes)):
        for by in ("birth", "death"):
            if len(dg):
                (outdir / f"cumulative_{name}_{by}.csv").write_text(cumulative_count_curve(dg, by).to_csv())
    battery = summary_battery(fld, nbhd, args.retain, diagrams=(comps, holes))
    ec = empirical_correlation(fld, min(50, min(fld.shape) - 1))
    (outdir / "correlation.csv").write_text(ec.to_csv())
    summary = {
        "input": str(args.input),
        "rows": fld.rows,
        "cols": fld.cols,
        "neighborhood": nbhd.value,
        "retain_fraction": args.retain,
        "detrend_degree": None if args.no_detrend else args.degree,
        "gaussianized": not args.no_gaussianize,
        **battery.to_dict(),
    }
    _dump(summary, outdir / "summary.json")
    if args.svg:
        for name, dg in (("components", comps), ("holes", holes)):
            try:
                hull = convex_peel(dg, args.retain).hull
            except DegenerateHullError:
                hull = None
            (outdir / f"diagram_{name}.svg").write_text(plots.diagram_svg(dg.points, name, hull))
        (outdir / "betti.svg").write_text(
            plots.step_svg(betti.levels, {"beta0": betti.beta0, "beta1": betti.beta1}, "Betti numbers")
        )
    _dump(summary)
    return EXIT_OK


def cmd_compare(args):
    a = _prepare(args, args.field_a)
    b = _prepare(args, args.field_b)
    rep = compare_fields(a, b, args.nbhd, args.retain, args.alpha,
                         filamentarity_only=args.filamentarity_only, threads=threads_from(args))
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    d = rep.to_dict()
    _dump(d, args.output)
    if args.output:
        _dump(d)
    return EXIT_OK


def cmd_gof(args):
    fld = _prepare(args, args.input)
    rep = gof_grf(fld, args.nbhd, args.delta0, max_lag=args.max_lag)
    _dump(rep.to_dict(), args.output)
    if args.output:
        _dump(rep.to_dict())
    return EXIT_OK


def cmd_expected(args):
    if args.family == "exponential":
        model = CorrelationModel.exponential(args.eta)
    else:
        model = CorrelationModel.matern(args.nu, args.eta)
    mom = extrema_moments(args.dim, args.nbhd, model, args.delta0)
    _dump(mom.to_dict(), args.output)
    if args.output:
        _dump(mom.to_dict())
    return EXIT_OK


def _load_diagrams(args):
    kind = FeatureKind(args.kind)
    nbhd = Neighborhood.parse(args.nbhd)
    diagrams, labels = [], []
    for path in args.inputs:
        if args.from_fields:
            fld = _prepare(args, path)
            fn = sublevel_components if kind is FeatureKind.COMPONENT else sublevel_holes
            for k, sub in enumerate(split_subsets(fld)):
                diagrams.append(fn(sub, nbhd))
                labels.append(f"{path}#{k}")
        else:
            dg = parse_diagram_csv(Path(path).read_text())
            if kind not in dg:
                raise ValueError(f"{path} has no {kind.value} pairs")
            diagrams.append(dg[kind])
            labels.append(str(path))
    return diagrams, labels


def cmd_bottleneck(args):
    diagrams, labels = _load_diagrams(args)
    mat = distance_matrix(diagrams, args.metric, threads=threads_from(args))
    lines = ["label," + ",".join(labels)]
    lines += [labels[i] + "," + ",".join(repr(float(v)) for v in mat[i]) for i in range(len(labels))]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p, preprocess=True):
    p.add_argument("--nbhd", default="cross", choices=[n.value for n in Neighborhood])
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $LATTICE_TOPO_THREADS or 1)")
    if preprocess:
        p.add_argument("--degree", type=int, default=4, help="polynomial detrend degree per axis")
        p.add_argument("--no-detrend", action="store_true")
        p.add_argument("--no-gaussianize", action="store_true")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    ap = _Parser(prog="lattice-topo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a benchmark field")
    p.add_argument("--model", default="gauss", choices=[m.value for m in ModelId])
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--margins", default="ranks", choices=["ranks", "exact"])
    p.add_argument("--format", default=None, choices=["binary", "csv"])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="persistence, summaries and curves of one field")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--retain", type=float, default=0.9)
    p.add_argument("--svg", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="subset Wilcoxon comparison of two fields")
    p.add_argument("field_a")
    p.add_argument("field_b")
    p.add_argument("--retain", type=float, default=0.9)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--filamentarity-only", action="store_true")
    p.add_argument("--csv", default=None, help="per-subset statistics")
    p.add_argument("-o", "--output", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gof", help="extremum counts against a fitted Gaussian field")
    p.add_argument("input")
    p.add_argument("--delta0", type=float, default=DEFAULT_DELTA0)
    p.add_argument("--max-lag", type=int, default=50, help="largest lag in the correlation fit")
    p.add_argument("-o", "--output", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("expected", help="mean and sd of the number of local maxima")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--family", default="exponential", choices=["exponential", "matern"])
    p.add_argument("--eta", type=float, default=20.0)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--delta0", type=float, default=DEFAULT_DELTA0)
    p.add_argument("-o", "--output", default=None)
    _add_common(p, preprocess=False)
    p.set_defaults(func=cmd_expected)

    p = sub.add_parser("bottleneck", help="pairwise distance matrix of diagrams")
    p.add_argument("inputs", nargs="+", help="diagram CSVs, or grid files with --from-fields")
    p.add_argument("--kind", default="hole", choices=[k.value for k in FeatureKind])
    p.add_argument("--metric", default="bottleneck", choices=["bottleneck", "wasserstein"])
    p.add_argument("--from-fields", action="store_true",
                   help="inputs are fields; use the diagrams of their nine subsets")
    p.add_argument("-o", "--output", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_bottleneck)
    return ap


def _fail(code, exc):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "col"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_INPUT, exc)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ArithmeticError, np.linalg.LinAlgError, NotPositiveSemidefinite, MemoryError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
