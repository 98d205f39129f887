"""Command-line entry point: ``coopnet <subcommand> --spec FILE``.

Exit status: 0 success, 2 configuration error, 3 numeric or training
failure, 4 gradient check outside tolerance.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import experiments as ex
from .datasets import IdxTruncatedError
from .errors import (
    ConfigError,
    ConsistencyError,
    EmptyDatasetError,
    IdxFormatError,
    NumericError,
    TrainingError,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 2, 3, 4


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spec_required=True):
        p.add_argument("--spec", required=spec_required, help="experiment spec file")
        p.add_argument("--out", help="output directory (overrides the spec)")
        p.add_argument("--workers", type=int, help="parallel grid cells")
        p.add_argument("--seed-override", type=_int_list, metavar="LIST",
                       help="comma-separated seeds replacing the spec's list")
        p.add_argument("-q", "--quiet", action="store_true")
        return p

    common(sub.add_parser("train", help="train every grid cell, no analyses"))
    for name in ("perplexity", "fractions", "systems"):
        common(sub.add_parser(name, help=f"train if needed, then run the {name} analysis"))
    common(sub.add_parser("sweep", help="train and run every analysis listed in the spec"))

    gc = common(sub.add_parser("gradcheck", help="backprop vs. path-sum on random nets"),
                spec_required=False)
    gc.add_argument("--sizes", action="append", type=_int_list, metavar="LIST",
                    help="layer sizes incl. output, e.g. 5,4,3 (repeatable)")
    gc.add_argument("--feature-dim", type=int, default=4)
    gc.add_argument("--samples", type=int)
    gc.add_argument("--tolerance", type=float)
    gc.add_argument("--budget", type=int)
    gc.add_argument("--report", help="CSV report path (default: OUT/gradcheck.csv)")

    em = sub.add_parser("emit", help="write figure CSVs from a finished run")
    em.add_argument("--spec", help="spec file, used to locate the output directory")
    em.add_argument("--out", help="run directory holding manifest.json")
    em.add_argument("--figure", required=True,
                    choices=sorted(set(ex.FIGURES) | set(ex.FIGURE_ALIASES)))
    em.add_argument("--dest", help="directory for the figure CSVs")
    em.add_argument("--layer", type=int, default=1)
    em.add_argument("--node", type=int, default=0)
    em.add_argument("--bins", type=int, default=50)
    em.add_argument("--split", choices=("train", "val", "test"), default="train")
    return parser


def _spec(args) -> ex.ExperimentSpec:
    overrides = {"out": args.out, "workers": args.workers, "seeds": args.seed_override}
    return ex.load_spec(args.spec, **overrides)


def _cmd_run(args, log) -> int:
    spec = _spec(args)
    analyses = {"train": (), "sweep": None}.get(args.command, (args.command,))
    manifest = ex.run(spec, analyses=analyses, log=log)
    for cid in manifest.diverged:
        print(f"{cid}: {manifest.cells[cid].get('error')}", file=sys.stderr)
    if manifest.diverged:
        return EXIT_NUMERIC
    failed = [cid for cid, r in manifest.cells.items()
              if r.get("analyses", {}).get("gradcheck", {}).get("ok") is False]
    return EXIT_TOLERANCE if failed else EXIT_OK


def _cmd_gradcheck(args, log) -> int:
    spec = _spec(args) if args.spec else None
    seeds = args.seed_override or (spec.seeds if spec else (1, 2, 3))
    samples = args.samples or (spec.gradcheck_samples if spec else 20)
    tol = args.tolerance if args.tolerance is not None else (
        spec.gradcheck_tolerance if spec else 1e-10)
    budget = args.budget or (spec.gradcheck_budget if spec else 10**6)
    if args.sizes:
        feature_dim, loss = args.feature_dim, spec.loss if spec else "mse_linear"
        sizes_list = args.sizes
    elif spec:
        train_set = ex.load_data(spec)[0]
        feature_dim, loss = train_set.feature_dim, spec.loss
        sizes_list = [(w,) * d + (train_set.class_count,) for d, w in spec.architectures]
    else:
        raise ConfigError("gradcheck needs --sizes or --spec")

    results = ex.gradcheck(sizes_list, feature_dim, seeds, samples, tol, budget, loss)
    out = Path(args.out or (spec.out if spec else "."))
    out.mkdir(parents=True, exist_ok=True)
    report = Path(args.report) if args.report else out / "gradcheck.csv"
    writer_rows = []
    failures = 0
    for r in results:
        sizes = "-".join(map(str, r.layer_sizes))
        if r.skipped:
            print(f"{sizes} seed {r.seed}: skipped ({r.skipped})")
        for m in r.mismatches:
            failures += 1
            print(f"{sizes} seed {r.seed} sample {m.sample} w{m.coord}: "
                  f"backprop {m.backprop!r} path_sum {m.path_sum!r} "
                  f"abs_diff {m.abs_diff!r}")
        writer_rows.extend([sizes, r.seed] + row for row in r.csv_rows())
    checked = [r for r in results if not r.skipped]
    worst = max((r.max_abs_diff for r in checked), default=float("nan"))
    print(f"summary: {len(checked)} nets checked, {len(results) - len(checked)} skipped, "
          f"{failures} coordinates >= {tol!r}, max abs diff {worst!r}")
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer_sizes", "seed", "row", "sample", "layer", "node", "source",
                    "backprop", "path_sum", "abs_diff"])
        w.writerows([[ex._fmt(v) for v in row] for row in writer_rows])
    return EXIT_TOLERANCE if failures else EXIT_OK


def _cmd_emit(args, log) -> int:
    if args.out:
        run_dir = Path(args.out)
    elif args.spec:
        run_dir = Path(ex.load_spec(args.spec).out)
    else:
        raise ConfigError("emit needs --out or --spec")
    if not (run_dir / ex.MANIFEST).exists():
        raise ConfigError(f"no manifest in {run_dir}; run `coopnet sweep` first")
    manifest = ex.RunManifest.load(run_dir)
    paths = ex.emit_figure_data(manifest, args.figure, args.dest, layer=args.layer,
                                node=args.node, bins=args.bins, split=args.split)
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = None if getattr(args, "quiet", False) else (lambda m: print(m, file=sys.stderr))
    handler = {"gradcheck": _cmd_gradcheck, "emit": _cmd_emit}.get(args.command, _cmd_run)
    try:
        return handler(args, log)
    except (ConfigError, IdxFormatError, IdxTruncatedError, ConsistencyError,
            EmptyDatasetError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
