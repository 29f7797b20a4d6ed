"""Command-line harness: ``stortd {run,sweep,ablate,profile,export}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import experiment
from .config import ConfigError, ExperimentConfig, load_config, serialize_config
from .streamio import StreamFormatError, write_masks, write_report, write_stream

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value experiment file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--variant", choices=["STORTD", "SORTD", "TORTD", "ORTD"])
    p.add_argument("--pattern", choices=["RM", "TM", "SM", "MM"])
    p.add_argument("--rate", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--ranks", type=_ints, help="r1,r2,r3")
    p.add_argument("--use-updated-spatial", action="store_true", default=None)
    p.add_argument("--seeds", type=int, help="number of seeds to average over")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="stortd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="stream one scenario and write a report")
    p.add_argument("--no-timing", action="store_true", help="record zero wall times (byte-stable output)")
    p.add_argument("--no-dump", action="store_true", help="skip recovered/outlier slice dumps")

    p = sub.add_parser("sweep", parents=[common], help="alpha x beta grid")
    p.add_argument("--alphas", type=_floats, default=list(experiment.LOG_GRID))
    p.add_argument("--betas", type=_floats, default=list(experiment.LOG_GRID))
    p.add_argument("--patterns", type=lambda s: s.split(","), help="comma-separated patterns")

    p = sub.add_parser("ablate", parents=[common], help="ORTD / SORTD / TORTD / STORTD comparison")
    p.add_argument("--patterns", type=lambda s: s.split(","))
    p.add_argument("--rates", type=_floats)
    p.add_argument(
        "--grid",
        default=",".join(str(g) for g in experiment.LOG_GRID),
        help="weights each variant selects from, or 'none' to use --alpha/--beta as given",
    )

    p = sub.add_parser("profile", parents=[common], help="per-slice cost vs stream length")
    p.add_argument("--lengths", type=_ints, default=(50, 100, 200))
    p.add_argument("--batch-iters", type=int, default=30)
    p.add_argument("--no-batch", action="store_true")

    sub.add_parser("export", parents=[common], help="write the synthetic stream, truth and masks")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = dict(
        seed=args.seed,
        out=args.out,
        variant=args.variant,
        pattern=args.pattern,
        rate=args.rate,
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        lam=args.lam,
        ranks=args.ranks,
        use_updated_spatial=args.use_updated_spatial,
        seeds=args.seeds,
    )
    if getattr(args, "no_timing", False):
        overrides["timing"] = False
    return cfg.with_overrides(**overrides)


def _write_rows(path, rows, seeds):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    keys = [k for k in rows[0] if k != "rse"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(keys + [f"rse_seed{s}" for s in range(seeds)])
        for row in rows:
            writer.writerow([_cell(row[k]) for k in keys] + [repr(v) for v in row["rse"]])


def _cell(value):
    return repr(value) if isinstance(value, float) else str(value)


def cmd_run(cfg, args):
    report = experiment.run(cfg, keep_slices=not args.no_dump)
    write_report(report, cfg.out, dump_slices=not args.no_dump)
    with open(os.path.join(cfg.out, "config.txt"), "w") as fh:
        fh.write(serialize_config(cfg))
    print(f"final RSE: {report.final_rse:.6g}")
    print(f"mean per-slice time: {report.mean_time() * 1e3:.4g} ms")
    return EXIT_OK


def cmd_sweep(cfg, args):
    rows = experiment.run_sweep(cfg, args.alphas, args.betas, args.patterns)
    path = os.path.join(cfg.out, "sweep.csv")
    _write_rows(path, rows, cfg.seeds)
    best = min(rows, key=lambda r: r["mean_rse"])
    print(f"wrote {len(rows)} cells to {path}; best alpha={best['alpha']:g} beta={best['beta']:g} "
          f"RSE={best['mean_rse']:.6g}")
    return EXIT_OK


def cmd_ablate(cfg, args):
    grid = None if args.grid.strip().lower() == "none" else _floats(args.grid)
    rows = experiment.run_ablation(cfg, args.patterns, args.rates, grid)
    path = os.path.join(cfg.out, "ablation.csv")
    _write_rows(path, rows, cfg.seeds)
    for r in rows:
        print(f"{r['pattern']} {r['rate']:.2f} {r['variant']:>6}: RSE={r['mean_rse']:.6g}")
    return EXIT_OK


def cmd_profile(cfg, args):
    rows = experiment.run_profile(cfg, args.lengths, args.batch_iters, with_batch=not args.no_batch)
    path = os.path.join(cfg.out, "profile.csv")
    os.makedirs(cfg.out, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for row in rows:
            writer.writerow([_cell(v) for v in row.values()])
    for r in rows:
        print(f"T={r['T']}: {r['mean_time_ms']:.4g} ms/slice, slope {r['relative_slope']:.3g} of mean, "
              f"state {r['state_elements']}, speedup {r['speedup']:.4g}")
    return EXIT_OK


def cmd_export(cfg, args):
    if not cfg.is_synthetic:
        raise ConfigError("export needs a synthetic configuration")
    from .synth import gen_stream

    clean, _ = gen_stream(cfg.synth_spec(cfg.seed))
    observed, masks = experiment.materialize(cfg, cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    T = clean.shape[2]
    write_stream(os.path.join(cfg.out, "truth.stream"), clean)
    write_stream(os.path.join(cfg.out, "observed.stream"), np.where(masks, observed, np.nan))
    write_masks(os.path.join(cfg.out, "mask.stream"), [masks[:, :, t] for t in range(T)])
    print(f"wrote {T} days to {cfg.out}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "profile": cmd_profile,
    "export": cmd_export,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = resolve_config(args)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StreamFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
