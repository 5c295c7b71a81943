"""Command-line entry point: snr-cdf, bler-curve, optimize-qm, e2e-sim, sampler-check."""

from __future__ import annotations

import argparse
import os
import sys


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gsclink",
        description="Link-level simulator for semantic video transport over a "
                    "LEO satellite relay")
    p.add_argument("--workers", type=int, default=0,
                   help="cap the numeric thread count (0 keeps the default)")
    sub = p.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("snr-cdf", "end-to-end SNR CDF per distance"),
        ("bler-curve", "Monte Carlo BLER table for the configured code"),
        ("optimize-qm", "quantizer planning table and chosen (Q*, M*)"),
        ("e2e-sim", "full pipeline metrics per synthetic video"),
        ("sampler-check", "sampler identity and gradient validation"),
    ]:
        sp = sub.add_parser(name, help=doc)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--override", action="append", default=[],
                        metavar="KEY.PATH=VALUE", help="config override (repeatable)")
        if name == "sampler-check":
            sp.add_argument("--inject-wrong-coefficient", action="store_true",
                            help=argparse.SUPPRESS)  # mutation hook for tests
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.workers and args.workers > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.workers))

    from . import harness

    try:
        cfg = harness.load_config(args.config)
        cfg = harness.apply_overrides(cfg, args.override)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["out_dir"] = args.out
        if args.command == "snr-cdf":
            harness.cmd_snr_cdf(cfg)
        elif args.command == "bler-curve":
            harness.cmd_bler_curve(cfg)
        elif args.command == "optimize-qm":
            harness.cmd_optimize_qm(cfg)
        elif args.command == "e2e-sim":
            harness.cmd_e2e_sim(cfg)
        elif args.command == "sampler-check":
            _, code = harness.cmd_sampler_check(
                cfg, inject_coefficient_error=args.inject_wrong_coefficient)
            return code
    except harness.ConfigError as exc:
        print(f"configuration rejected: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
