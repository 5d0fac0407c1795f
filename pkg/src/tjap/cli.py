"""Command-line front end.

Verbs: run <config.json>, verify <outdir>, print-default-config.
Exit codes: 0 all cells ok, 1 partial failure or verify mismatch,
2 config error.
"""

import argparse
import os
import sys


def _pin_blas_threads():
    # Per-run matrices are tiny, so one BLAS thread per worker process
    # wins over nested threading.  Must happen before numpy loads.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tjap",
        description="Multi-market assortment-pricing benchmark harness")
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run the experiment grid from a "
                                       "JSON config")
    run_p.add_argument("config", help="path to the JSON config")
    run_p.add_argument("--out", default=None,
                       help="output directory (default: 'out' config key)")
    run_p.add_argument("--parallel", type=int, default=None,
                       help="worker processes (TJAP_THREADS env overrides)")
    run_p.add_argument("--quiet", action="store_true",
                       help="suppress per-cell progress lines")

    ver_p = sub.add_parser("verify", help="recompute the aggregate from the "
                                          "run CSVs and compare")
    ver_p.add_argument("outdir", help="directory written by 'run'")
    ver_p.add_argument("--quiet", action="store_true")

    sub.add_parser("print-default-config",
                   help="write the default JSON config to stdout")
    return parser


def _resolve_parallel(flag_value):
    env = os.environ.get("TJAP_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ValueError("TJAP_THREADS must be an integer, got %r" % env)
        if n < 1:
            raise ValueError("TJAP_THREADS must be >= 1, got %d" % n)
        return n
    return flag_value


def main(argv=None):
    _pin_blas_threads()
    args = _build_parser().parse_args(argv)

    from . import harness
    from .errors import ConfigError

    if args.verb == "print-default-config":
        print(harness.default_config_json())
        return 0
    if args.verb == "run":
        try:
            config = harness.load_config(args.config)
            parallel = _resolve_parallel(args.parallel)
        except (ConfigError, ValueError) as exc:
            print("config error: %s" % exc, file=sys.stderr)
            return 2
        return harness.run_experiment(config, out_dir=args.out,
                                      parallel=parallel, quiet=args.quiet)
    if args.verb == "verify":
        return harness.verify_output(args.outdir, quiet=args.quiet)
    raise AssertionError("unreachable verb %r" % args.verb)


if __name__ == "__main__":
    sys.exit(main())
