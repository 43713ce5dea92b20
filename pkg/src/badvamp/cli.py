"""Command line entry point: ``badvamp {csmu,selfcal,dictlearn,run} ...``."""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

log = logging.getLogger("badvamp")


def _common(p):
    p.add_argument("--trials", type=int, help="trials per grid point (preset default otherwise)")
    p.add_argument("--seed", type=int, help="base seed for sub-seed derivation")
    p.add_argument("--out", help="CSV (or .json) path for per-trial records")
    p.add_argument("--threads", type=int, help="worker processes (default 1)")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure next to the output")
    p.add_argument("--timing", action="store_true",
                   help="record wall_time_ms (makes the CSV run-dependent)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    ap = argparse.ArgumentParser(prog="badvamp",
                                 description="Monte-Carlo experiments for bilinear adaptive VAMP")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("csmu", help="compressive sensing with matrix uncertainty")
    p.add_argument("--sweep", choices=("mn", "mu"), default="mn",
                   help="sweep the sampling ratio M/N or the matrix mean mu")
    _common(p)

    p = sub.add_parser("selfcal", help="self-calibration success grid over (Q, K)")
    _common(p)

    p = sub.add_parser("dictlearn", help="dictionary learning")
    p.add_argument("--sweep", choices=("phase", "cond"), default="phase",
                   help="noiseless (N, L) phase grid or noisy condition-number sweep")
    p.add_argument("--mode", choices=("unstructured", "structured"),
                   help="dictionary model for the phase sweep")
    _common(p)

    p = sub.add_parser("run", help="run an experiment from a JSON config file")
    p.add_argument("config")
    _common(p)
    return ap


def _experiment_for(args):
    if args.command == "csmu":
        return f"csmu_sweep_{args.sweep}"
    if args.command == "selfcal":
        return "selfcal_grid"
    return "dl_phase" if args.sweep == "phase" else "dl_cond"


def make_config(args):
    overrides = dict(trials=args.trials, base_seed=args.seed, output_path=args.out,
                     threads=args.threads, timing=args.timing or None)
    if args.command == "run":
        return harness.load_config(args.config, **overrides)
    exp = _experiment_for(args)
    cfg = harness.preset(exp, args.preset, **overrides)
    if args.out is None:
        cfg = replace(cfg, output_path=f"results/{exp}_{args.preset}.csv")
    if exp == "dl_phase" and args.mode:
        grid = dict(cfg.grid, mode=[args.mode])
        cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), "grid": grid})
    return cfg


def _progress(done, total):
    if done == total or done % max(1, total // 20) == 0:
        log.info("%d/%d trials", done, total)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    if cfg.long_running:
        log.warning("%s uses paper-scale dimensions; expect a long run", cfg.experiment)

    records = harness.run_experiment(cfg, progress=_progress)
    out = Path(cfg.output_path)
    fmt = "json" if out.suffix == ".json" else "csv"
    try:
        path, spath = harness.emit(records, out, format=fmt)
        written = [path, spath]
        if not args.no_plot:
            from .plotting import render
            written += render(cfg.experiment, harness.summarize(records), path)
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    for w in written:
        print(w)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
