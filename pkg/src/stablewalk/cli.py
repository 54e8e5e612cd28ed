"""Command line entry point: ``stablewalk <subcommand> [flags]``.

Values from ``--config`` (a JSON object with :class:`ExperimentConfig`
fields) override the flags.  The exit status is 0 when every check
passes, 1 when one fails and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .heavy_tail import InfeasibleLawError

SUBCOMMANDS = {
    "simulate-walk": "run one walk, dump heights and check the F^X/F^R height identities",
    "tail-l1": "Hill tables for L^1 under both measures, V, N and L^1_0",
    "spine-check": "spine chain, both spinal constructions and the many-to-one formula",
    "identities": "every closed-form and structural identity",
    "scaling": "KS trend of rescaled walk heights against the stable reference",
    "reference": "reference height samples and their self-consistency",
}


def _int_list(text: str) -> list[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def _caps(text: str) -> dict:
    text = text.strip()
    if text.startswith("{"):
        return json.loads(text)
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        key, _, value = item.partition("=")
        if not value:
            raise argparse.ArgumentTypeError(f"caps entry {item!r} is not key=value")
        out[key.strip()] = int(float(value))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablewalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--kappa", type=float, help="tail index in (1, 2)")
        p.add_argument("--mean", type=float, help="offspring mean m > 1")
        p.add_argument("--tail-const", type=float, dest="tail_const", help="constant C_l in P(nu > x) ~ C_l x^-kappa")
        p.add_argument("--n", type=_int_list, help="steps (simulate-walk) or comma-separated n grid")
        p.add_argument("--replicas", type=int, help="replicas of the scaling and reference experiments")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory for reports and sample dumps")
        p.add_argument("--caps", type=_caps, help="caps as key=value pairs, e.g. budget=1e5,step_cap=1e7")
        p.add_argument("--scale", type=float, help="multiplier on the default sample sizes of the checks")
        p.add_argument("--config", help="JSON file whose entries override the flags")
    return parser


def config_from_args(args: argparse.Namespace) -> tuple[ex.ExperimentConfig, int | None]:
    record: dict = {}
    for key in ("kappa", "mean", "tail_const", "replicas", "seed", "caps", "scale"):
        value = getattr(args, key)
        if value is not None:
            record[key] = value
    if args.out is not None:
        record["out_dir"] = args.out
    steps = None
    if args.n is not None:
        if args.command == "simulate-walk":
            steps = args.n[0]
        else:
            record["n_grid"] = tuple(args.n)
    if args.config is not None:
        override = json.loads(Path(args.config).read_text())
        steps = override.pop("steps", steps)
        record.update(override)
    cfg = ex.ExperimentConfig.from_record(record)
    cfg.validate()
    return cfg, steps


def run(args: argparse.Namespace) -> ex.Report:
    cfg, steps = config_from_args(args)
    if args.command == "simulate-walk":
        return ex.walk_check(cfg, steps or 10**4)
    if args.command == "tail-l1":
        return ex.tail_experiment(cfg)
    if args.command == "spine-check":
        return ex.spine_suite(cfg)
    if args.command == "identities":
        return ex.identity_suite(cfg)
    if args.command == "scaling":
        return ex.scaling_experiment(cfg)
    return ex.reference_experiment(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = run(args)
    except (ValueError, InfeasibleLawError, OSError, json.JSONDecodeError) as err:
        print(f"stablewalk: error: {err}", file=sys.stderr)
        return 2
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
