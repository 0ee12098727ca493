"""Command line entry point ``steindyn``.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 acceptance check failed.
"""
import argparse
import logging
import os
import sys

from . import runner
from .config import ExperimentConfig
from .errors import ConfigError, ContractError, NumericalError, ResourceError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3
STEIN_TOL = 1e-6


def _parser():
    p = argparse.ArgumentParser(prog="steindyn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (INI with JSON values)")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, metavar="U64", help="override the master seed")
    common.add_argument("--workers", type=int, default=1, metavar="N", help="worker threads")
    common.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("simulate", "sample W(N) pools"),
                       ("correlations", "correlation profile, fitted constants and Sigma"),
                       ("bound", "explicit error bounds per N"),
                       ("distance", "empirical distances to the normal law"),
                       ("scheme", "conditioning-scheme error terms on the doubling map"),
                       ("stein-check", "residual sweep of the 1D Stein solutions"),
                       ("run", "full pipeline")]:
        sp = sub.add_parser(name, parents=[common], help=text)
        if name == "run":
            sp.add_argument("--check", action="store_true",
                            help="exit 3 unless every bound dominates its estimate")
    rf = sub.add_parser("rate-fit", parents=[common], help="fit decay rates to a metrics CSV")
    rf.add_argument("--input", required=True, metavar="CSV", help="CSV with N and estimate columns")
    rf.add_argument("--metric", default=None, help="select rows with this metric label")
    return p


def _load(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _dispatch(args):
    out = args.out
    if args.command == "rate-fit":
        out = out or "."
        os.makedirs(out, exist_ok=True)
        fits = runner.rate_fit_file(args.input, out, args.metric)
        for r in fits.values():
            print(f"{r.model}: parameter={r.parameter:.6g} residual={r.residual:.3g} r2={r.r2:.4f}")
        return EXIT_OK
    if args.command != "stein-check" and not args.config:
        raise ConfigError("--config", "required for this subcommand")
    cfg = _load(args) if args.config else ExperimentConfig()
    if args.command != "stein-check":
        cfg.validate()
    out = out or cfg.outputs
    os.makedirs(out, exist_ok=True)
    w = args.workers
    if args.command == "simulate":
        runner.simulate(cfg, out, w)
    elif args.command == "correlations":
        prof, _ = runner.correlations(cfg, out, w)
        print(f"C2={prof.C2:.6g} C4={prof.C4:.6g} lambda={prof.lam:.6g} ({prof.rate_source})")
    elif args.command == "bound":
        for N, rep in runner.bound(cfg, out, w).items():
            print(f"N={N} K={rep.K_used} bound={rep.total:.6g}")
    elif args.command == "distance":
        runner.distance(cfg, out, w)
    elif args.command == "scheme":
        reps = runner.scheme_run(cfg, out, w)
        if not all(r.passed for r in reps):
            return EXIT_CHECK
    elif args.command == "stein-check":
        worst = runner.stein_check(cfg, out)
        print(f"max |residual| = {worst:.3g}")
        if worst > STEIN_TOL:
            return EXIT_CHECK
    elif args.command == "run":
        bundle = runner.run(cfg, out, w)
        for r in bundle.results:
            print(f"N={r.N} K={r.K} estimate={r.estimate:.4g} bound={r.bound:.4g} "
                  f"{'ok' if r.passed else 'FAIL'}")
        for fit in bundle.fits.values():
            print(f"{fit.model}: {fit.parameter:.4g} (r2={fit.r2:.3f})")
        if args.check and not bundle.all_pass:
            return EXIT_CHECK
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ResourceError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
