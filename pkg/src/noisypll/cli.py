"""Command-line entry point: ``noisypll {train,theory,sweep}``.

Exit codes: 0 success, 1 theory checks failed, 2 invalid configuration,
3 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .model import NumericalError
from .runner import run_sweep, run_theory, run_train
from .theory import TheoryViolation

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(prog="noisypll", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train one model per seed; refine.enabled=false gives the plain baseline"),
        ("theory", "simulate multi-round refinement on an oracle population"),
        ("sweep", "grid over sweep.* keys, one run per cell and seed"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat 'section.key = value' file")
        p.add_argument("--seed", help="comma-separated seeds, overrides run.seeds")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, help="parallel processes, overrides run.workers")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        for pair in args.set:
            if "=" not in pair:
                raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
            key, value = pair.split("=", 1)
            cfg.set(key.strip(), value.strip())
        if args.seed is not None:
            cfg.set("run.seeds", args.seed)
        if args.workers is not None:
            cfg.set("run.workers", str(args.workers))
        if not cfg["run.seeds"]:
            raise ConfigError("at least one seed is required")
        if cfg["run.workers"] < 1:
            raise ConfigError("run.workers must be >= 1")

        if args.command == "train":
            rows = run_train(cfg, args.out, cfg["run.workers"])
            for r in rows:
                print(
                    f"seed {r['seed']}: best {r['best_test_acc']:.4f} last {r['last_test_acc']:.4f} "
                    f"noise {r['final_noise_level']:.4f} e0 {r['e0']}"
                )
        elif args.command == "theory":
            reports = run_theory(cfg, args.out)
            failed = [name for rep in reports for name, ok in rep.checks.items() if not ok]
            for rep in reports:
                print(
                    f"rounds {rep.num_rounds} (bound {rep.round_bound:.2f}) final noisy mass "
                    f"{rep.final_noisy_mass:.4f} disagreement {rep.final_disagreement:.4f} "
                    f"< {rep.guarantee:.4f}"
                )
            if failed:
                print("failed checks: " + ", ".join(sorted(set(failed))), file=sys.stderr)
                return EXIT_CHECKS
        else:
            rows = run_sweep(cfg, args.out, cfg["run.workers"])
            print(f"{len(rows)} runs written to {args.out}")
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical abort at epoch {err.epoch}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except TheoryViolation as err:
        print(f"theory violation: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
