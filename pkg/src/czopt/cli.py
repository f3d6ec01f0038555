"""Command-line entry point: ``czopt <subcommand> [options]``."""
import argparse
import json
import logging
import sys

from .config import METHODS, RunConfig, load_config
from . import experiments


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="czopt", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--levels", type=int, help="Fock levels per transmon")
    common.add_argument("--workers", type=int, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("diagnose", parents=[common], help="ZZ/XX couplings versus coupler frequency")
    sub.add_parser("optimize", parents=[common], help="optimize one CZ pulse")
    p = sub.add_parser("sweep-gate-time", parents=[common], help="infidelity versus gate time")
    p.add_argument("--times", type=_floats, help="comma-separated gate times in ns")
    p = sub.add_parser("robustness", parents=[common], help="fixed pulse versus idle-frequency drift")
    p.add_argument("--pulse", required=True, help="pulse JSON file")
    p.add_argument("--vary", choices=("w1", "w2", "wc"))
    p.add_argument("--values", type=_floats, help="comma-separated idle frequencies in GHz")
    p = sub.add_parser("smoothing", parents=[common], help="fidelity versus logistic edge width")
    p.add_argument("--pulse", required=True, help="pulse JSON file")
    p.add_argument("--widths", type=_floats, help="comma-separated widths in ns")
    p = sub.add_parser("step-study", parents=[common], help="infidelity versus control step length")
    p.add_argument("--steps", type=_floats, help="comma-separated step lengths in ns")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.override(seed=args.seed, out=args.out, method=args.method,
                        levels=args.levels, workers=args.workers)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        cfg = resolve_config(args)
        if args.command == "diagnose":
            manifest = experiments.cmd_diagnose(cfg)
        elif args.command == "optimize":
            manifest = experiments.cmd_optimize(cfg)
        elif args.command == "sweep-gate-time":
            manifest = experiments.cmd_sweep_gate_time(cfg, args.times)
        elif args.command == "robustness":
            manifest = experiments.cmd_robustness(cfg, args.pulse, args.vary, args.values)
        elif args.command == "smoothing":
            manifest = experiments.cmd_smoothing(cfg, args.pulse, args.widths)
        else:
            manifest = experiments.cmd_step_study(cfg, args.steps)
    except Exception as exc:
        logging.getLogger("czopt").error("%s failed: %s", args.command, exc)
        if cfg is not None:
            tag = None
            if args.command == "robustness":
                tag = experiments.robustness_tag(args.vary or cfg.sweep.vary)
            experiments.Manifest(cfg, args.command, tag=tag).finish("failed", repr(exc))
        return 1
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True))
    return 0 if manifest["status"] == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
