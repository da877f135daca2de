"""Command-line interface: ``quadric-detect {detect,fit,bench,sweep,synth}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import secrets
import sys

import numpy as np

from . import kernels
from .detection import DetectionConfig, MODES, Trace, run_pipeline
from .errors import QuadricError, ParseError, UnsupportedFormat
from .fitting import fit_least_squares, fit_minimal_4pt
from .geometry import QuadricClass, algebraic_distance, classify
from .io import (DetectionReport, QuadricEntry, format_document, read_cloud, write_ply,
                 write_report)
from .scene import normalize_scene
from .synth import (SweepConfig, bench_lambda, corrupt, make_scene, random_quadric,
                    run_fitting_sweep, summarize_sweep, sweep_csv)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NOTHING = 0, 1, 2, 3
_DEFAULTS = {f.name: f.default for f in dataclasses.fields(DetectionConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg):
    print(f"quadric-detect: {msg}", file=sys.stderr)


# flag name -> (config field, type)
_CONFIG_FLAGS = [
    ("--tau-s", "tau_s", float, "voxel size as a fraction of the scene diameter (0 disables)"),
    ("--max-bases", "max_bases", int, "number of 3-point bases (RANSAC budget)"),
    ("--samples-per-basis", "samples_per_basis", int, "candidate points voted per basis"),
    ("--knn", "knn", int, "neighbours for normal estimation"),
    ("--neighbor-radius-factor", "neighbor_radius_factor", float,
     "basis companion radius as a multiple of --expected-diameter"),
    ("--expected-diameter", "expected_diameter", float,
     "expected primitive diameter in normalized units"),
    ("--tau", "tau", float, "algebraic inlier threshold"),
    ("--tau-n", "tau_n", float, "normal agreement threshold"),
    ("--weight", "weight", float, "weight of the gradient constraints"),
    ("--bin-count", "bin_count", int, "accumulator bins"),
    ("--kernel-bandwidth", "kernel_bandwidth", float, "KDE bandwidth in bins"),
    ("--lambda-scale", "lambda_scale", float, "scale c in theta = atan(lambda / c)"),
    ("--min-peak-votes", "min_peak_votes", int, "minimum smoothed peak mass"),
    ("--min-peak-fraction", "min_peak_fraction", float,
     "minimum peak mass as a fraction of votes cast"),
    ("--plane-min-fraction", "plane_min_fraction", float,
     "inlier fraction for a plane to be removed"),
    ("--max-planes", "max_planes", int, "maximum number of removed planes"),
    ("--rank-tol", "rank_tol", float, "relative singular value threshold for rank tests"),
    ("--tau-coeff", "tau_coeff", float, "l1 coefficient gate for clustering"),
    ("--tau-frob", "tau_frob", float, "Frobenius merge threshold"),
    ("--tau-geom", "tau_geom", float, "support-overlap merge threshold"),
    ("--k-sub", "k_sub", int, "scene subsample size for support overlap"),
]


def _add_detect(sub):
    p = sub.add_parser("detect", help="detect quadrics in a point cloud",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("input", help="PLY, xyz or xyzn file")
    p.add_argument("--format", choices=["ply-ascii", "ply-binary-little-endian", "xyz", "xyzn"],
                   help="input format (inferred from the file by default)")
    p.add_argument("--mode", choices=MODES, default=_DEFAULTS["mode"])
    p.add_argument("--seed", type=int, default=None,
                   help="random seed; drawn at random and echoed in the report when omitted")
    for flag, name, typ, text in _CONFIG_FLAGS:
        p.add_argument(flag, dest=name, type=typ, default=_DEFAULTS[name], help=text)
    p.add_argument("--no-plane-removal", dest="plane_removal", action="store_false",
                   help="keep dominant planes in generic/sphere modes")
    p.add_argument("--no-refine", dest="refine", action="store_false",
                   help="use the accumulator peak without least-squares refinement")
    p.add_argument("--viewpoint", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"),
                   help="sensor position for normal orientation (default: +z at infinity)")
    p.add_argument("--out", default="-", help="report path ('-' for stdout)")
    p.add_argument("--normalized", action="store_true",
                   help="report coefficients in the unit-ball frame instead of raw coordinates")
    p.add_argument("--timings", action="store_true", help="include per-stage wall times")
    p.add_argument("--dump-accumulator", metavar="PATH",
                   help="CSV of the accumulator behind the top-ranked hypothesis")
    p.add_argument("--dump-lambdas", metavar="PATH",
                   help="CSV of every voted lambda (basis_index, lambda, theta, bin)")
    p.set_defaults(func=cmd_detect)


def _config_from(args) -> DetectionConfig:
    kw = {f.name: getattr(args, f.name) for f in dataclasses.fields(DetectionConfig)
          if hasattr(args, f.name)}
    kw["viewpoint"] = tuple(args.viewpoint) if args.viewpoint else None
    return DetectionConfig(**kw)


def cmd_detect(args):
    try:
        cfg = _config_from(args)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else secrets.randbelow(2 ** 31)
    data = read_cloud(args.input, args.format)
    if len(data) < 3:
        _err("input has fewer than 3 points")
        return EXIT_IO
    trace = Trace(keep_lambdas=bool(args.dump_lambdas)) if (
        args.dump_accumulator or args.dump_lambdas) else None
    res = run_pipeline(data.points, data.normals, cfg, seed, trace=trace)

    entries = []
    for h in res.clustered:
        Q = h.quadric if args.normalized else res.cloud.to_raw(h.quadric)
        entries.append(QuadricEntry(list(Q.q), classify(h.quadric).value, h.score,
                                    h.inlier_count))
    planes = res.planes if args.normalized else res.raw_planes()
    report = DetectionReport(entries, [list(p.pi) for p in planes], cfg.to_dict(), seed,
                             "normalized" if args.normalized else "raw",
                             res.timings if args.timings else None)
    write_report(report, args.out)

    if args.dump_accumulator:
        top = res.clustered[0] if res.clustered else None
        acc = trace.accumulators.get(top.basis.hash_key) if top and top.basis else None
        if acc is None:
            _err("no accumulator to dump")
        else:
            acc.to_csv(args.dump_accumulator)
    if args.dump_lambdas:
        with open(args.dump_lambdas, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["basis_index", "lambda", "theta", "bin"])
            for i, lam, bins in trace.lambdas:
                theta = np.arctan(lam / cfg.lambda_scale)
                for l, t, b in zip(lam, theta, bins):
                    w.writerow([i, repr(float(l)), repr(float(t)), int(b)])
    if not entries:
        _err("no quadric found")
        return EXIT_NOTHING
    return EXIT_OK


def cmd_fit(args):
    data = read_cloud(args.input, args.format)
    if data.normals is None:
        _err("fit needs oriented points (normals in the input)")
        return EXIT_IO
    cloud = normalize_scene(data.points, data.normals)
    X, N = cloud.points, cloud.normals
    if args.method == "minimal4":
        if len(X) < 4:
            _err("minimal4 needs at least 4 points")
            return EXIT_IO
        idx = np.random.default_rng(args.seed).choice(len(X), 4, replace=False) \
            if len(X) > 4 else np.arange(4)
        Q, diag = fit_minimal_4pt(X[idx], N[idx])
    else:
        Q, diag = fit_least_squares(X, N)
    raw = cloud.to_raw(Q)
    res = np.abs(algebraic_distance(Q, X))
    report = {
        "method": args.method,
        "class": classify(Q).value,
        "coefficients": [float(v) for v in raw.q],
        "normalized_coefficients": [float(v) for v in Q.q],
        "rank": diag.rank,
        "condition": diag.condition if np.isfinite(diag.condition) else None,
        "max_abs_residual_normalized": float(res.max()),
        "mean_abs_residual_normalized": float(res.mean()),
    }
    text = format_document(report)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_bench(args):
    if args.lambda_trials < 1:
        _err("--lambda-trials must be positive")
        return EXIT_USAGE
    fast, slow, diff = bench_lambda(args.lambda_trials, seed=args.seed)
    print(f"backend: {kernels.BACKEND}")
    print(f"fast lambda (closed form): {fast:.1f} ns per lambda")
    print(f"full 16x10 re-solve:       {slow:.1f} ns per lambda")
    print(f"ratio fast/re-solve:       {fast / slow:.4f}")
    print(f"max |lambda difference| / (1 + |lambda|): {diff:.3e}")
    return EXIT_OK


def cmd_sweep(args):
    rows = run_fitting_sweep(SweepConfig(seed=args.seed, timings=args.timings))
    text = sweep_csv(rows)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    if args.summary:
        summary = summarize_sweep(rows)
        cols = list(summary[0].keys())
        with open(args.summary, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in summary:
                w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float)
                                                     else r[c]) for c in cols])
    return EXIT_OK


def cmd_synth(args):
    cls = QuadricClass(args.cls) if args.cls else None
    if not 0 <= args.clutter < 1 or args.noise < 0:
        _err("--clutter must lie in [0, 1) and --noise must be >= 0")
        return EXIT_USAGE
    Q = random_quadric(args.seed, cls)
    scene = corrupt(make_scene(Q, args.count, args.seed), args.noise, args.clutter, args.seed)
    comments = [f"quadric {classify(Q).value} " + " ".join(format(v, ".17g") for v in Q.q),
                f"seed {args.seed} noise {args.noise!r} clutter {args.clutter!r}"]
    out = sys.stdout.buffer if args.out in (None, "-") else args.out
    write_ply(out, scene.points, scene.normals, comments, binary=args.binary)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="quadric-detect", description="Quadric detection in oriented point clouds.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    _add_detect(sub)

    f = sub.add_parser("fit", help="fit one quadric to all (or four) oriented points")
    f.add_argument("input")
    f.add_argument("--format", choices=["ply-ascii", "ply-binary-little-endian", "xyz", "xyzn"])
    f.add_argument("--method", choices=["ls", "minimal4"], default="ls")
    f.add_argument("--seed", type=int, default=0, help="selects the minimal4 subset")
    f.add_argument("--out", default="-")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("bench", help="time closed-form lambda against full re-solves")
    b.add_argument("--lambda-trials", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="noise sweep of the minimal and least-squares fits (CSV)")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", default="-")
    s.add_argument("--summary", metavar="CSV", help="also write per-level mean/std")
    s.add_argument("--timings", action="store_true", help="fill the runtime_ns column")
    s.set_defaults(func=cmd_sweep)

    y = sub.add_parser("synth", help="write a synthetic quadric scene as PLY")
    y.add_argument("--class", dest="cls", choices=[c.value for c in QuadricClass])
    y.add_argument("--noise", type=float, default=0.0)
    y.add_argument("--clutter", type=float, default=0.0)
    y.add_argument("--count", type=int, default=1000, help="surface samples")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--binary", action="store_true", help="binary little-endian PLY")
    y.add_argument("--out", default="-")
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, UnsupportedFormat, OSError) as exc:
        _err(str(exc))
        return EXIT_IO
    except QuadricError as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
