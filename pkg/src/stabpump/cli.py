"""Command-line entry point: ``stabpump validate|spectrum|simulate|sweep|walk``.

Exit codes: 0 success, 1 validation/configuration failure, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, from_dict, load
from .dynamics import IntegrationError
from .protocol import ProtocolError
from .runner import simulate, spectrum_report, sweep, validate_report, walk_run
from .stabilizer import StabilizerError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

# CLI flag -> config key
_OVERRIDES = {
    "n_atoms": "n_atoms",
    "stabilizers": "stabilizers",
    "preset": "preset",
    "n_max": "n_max",
    "lam": "lambda",
    "cycles": "cycles",
    "epsilon": "epsilon",
    "dt": "dt",
    "stride": "stride",
    "initial": "initial",
    "variant": "variant",
    "coupled": "coupled",
    "overlap_rule": "overlap_rule",
    "output_dir": "output_dir",
    "name": "name",
    "seed": "seed",
    "trials": "trials",
    "walk_initial": "walk_initial",
    "g_khz": "g_khz",
    "checkpoint_every": "checkpoint_every",
    "workers": "workers",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--n-atoms", type=int)
    p.add_argument("--stabilizers", nargs="+", metavar="WORD", help="Pauli words, e.g. XZ ZX")
    p.add_argument("--preset", choices=["linear_cluster"])
    p.add_argument("--n-max", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--variant", choices=["standard", "rotated"])
    p.add_argument("--coupled", choices=["minus", "plus"])
    p.add_argument("--output-dir")
    p.add_argument("--name")
    p.add_argument("-v", "--verbose", action="store_true")


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cycles", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--no-stop", action="store_true", help="run all cycles, ignore the stop rule")
    p.add_argument("--dt", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--initial", choices=["fully_mixed", "all_L"])
    p.add_argument("--g-khz", type=float, help="coupling g in kHz, adds a t_ms column")
    p.add_argument("--checkpoint-every", type=int, help="checkpoint period in cycles")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabpump", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check the stabilizer set and summarize the schedule")
    _common(p)

    p = sub.add_parser("spectrum", help="dump H_ah eigenvalues grouped by excitation number")
    _common(p)

    p = sub.add_parser("simulate", help="integrate the pumping schedule")
    _common(p)
    _run_options(p)
    p.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")

    p = sub.add_parser("sweep", help="simulate once per lambda")
    _common(p)
    _run_options(p)
    p.add_argument("--lambdas", type=float, nargs="*")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("walk", help="random-walk convergence model")
    _common(p)
    p.add_argument("--overlap-rule", choices=["refined", "coarse"])
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--walk-initial", choices=["uniform", "worst"])
    return parser


def resolve_config(args: argparse.Namespace):
    overrides = {}
    for attr, key in _OVERRIDES.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if overrides.get("preset") is not None:
        overrides.setdefault("stabilizers", None)
    if overrides.get("stabilizers") is not None:
        overrides.setdefault("preset", None)
    if getattr(args, "no_stop", False):
        overrides["epsilon"] = None
    if getattr(args, "lambdas", None) is not None:
        overrides["lambdas"] = args.lambdas
    if args.config:
        return load(args.config, overrides)
    return from_dict(overrides)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command == "validate":
            report = validate_report(cfg)
            _emit(report)
            return EXIT_OK if report["ok"] else EXIT_INVALID
        if args.command == "spectrum":
            _emit(spectrum_report(cfg))
            return EXIT_OK
        if args.command == "simulate":
            result = simulate(cfg, resume=args.resume, write=True)
            _emit({"config_hash": cfg.digest(), "wall_time_s": result.wall_time, **result.summary()})
            return EXIT_OK
        if args.command == "sweep":
            lambdas = cfg.lambdas if cfg.lambdas is not None else [cfg.lam]
            if not lambdas:
                print("error: empty lambda list", file=sys.stderr)
                return EXIT_INVALID
            _emit(sweep(cfg, lambdas))
            return EXIT_OK
        if args.command == "walk":
            _emit(walk_run(cfg))
            return EXIT_OK
    except (ConfigError, StabilizerError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        # remaining input problems, e.g. a step size that does not resolve the dynamics
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IntegrationError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
