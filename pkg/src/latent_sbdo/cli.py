"""Command line entry point: ``latent-sbdo <stage> CONFIG [--set key=value ...]``."""

import argparse
import sys

from .config import ConfigError, load_config
from .ffd import InfeasibleSpaceError
from .io import ArtifactError, MalformedLogError
from ._validation import RankDeficiencyError
from .pipeline import BudgetError, LockBusyError, ModeError, StaleArtifactError, run_stage

EXIT_CODES = [
    (ConfigError, 2, "config"),
    (ModeError, 2, "config"),
    (InfeasibleSpaceError, 3, "infeasible"),
    (RankDeficiencyError, 4, "rank"),
    (BudgetError, 5, "budget"),
    (MalformedLogError, 6, "malformed-log"),
    (StaleArtifactError, 7, "integrity"),
    (ArtifactError, 7, "integrity"),
    (LockBusyError, 8, "locked"),
    (Exception, 1, "internal"),
]


def build_parser():
    parser = argparse.ArgumentParser(prog="latent-sbdo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("sample", "draw the FFD geometry dataset"),
                       ("fit", "fit the latent model and write the variance curve"),
                       ("threshold", "compute phi_max and distance histograms"),
                       ("optimize", "run DIRECT or GP-LCB in the configured space"),
                       ("report", "convergence curves and summary tables from run logs"),
                       ("selftest", "run the built-in invariant checks")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("config", nargs="?" if name == "selftest" else None, help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. optimizer.budget=50")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            from .selftest import run_selftest
            return 0 if run_selftest() else 1
        cfg = load_config(args.config, args.overrides)
        run_stage(cfg, args.command)
    except Exception as exc:
        for cls, code, tag in EXIT_CODES:
            if isinstance(exc, cls):
                message = str(exc).replace("\n", " ")
                print(f"error[{tag}]: {message}", file=sys.stderr)
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
