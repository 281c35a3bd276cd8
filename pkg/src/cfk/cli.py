"""Command-line entry point: ``cfk run <experiment> [flags]`` and ``cfk simulate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .dataio import write_dataset
from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, run
from .simgen import Scenario, ScenarioConfig, gen_scenario


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _named_or_float(name: str):
    def parse(text: str):
        if text == name:
            return text
        try:
            return float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected '{name}' or a number, got {text!r}") from None

    return parse


def _override(text: str) -> tuple:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfk", description="Run counterfactual-embedding experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment and write its result files")
    p.add_argument("name", nargs="?", choices=EXPERIMENTS, help="experiment (same as --experiment)")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--n", type=int)
    p.add_argument("--ns", type=_int_list, help="comma-separated sample sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float, help="test level")
    p.add_argument("--alphas", type=_float_list, help="comma-separated policy shifts (ope_sweep)")
    p.add_argument("--kernel", choices=("gaussian", "laplace", "linear", "polynomial"))
    p.add_argument("--bandwidth", type=_named_or_float("median"))
    p.add_argument("--epsilon", type=_named_or_float("cv"))
    p.add_argument("--bootstrap", type=int, metavar="B")
    p.add_argument("--nystrom-rank", type=int, dest="nystrom_rank")
    p.add_argument("--set", type=_override, action="append", default=[], metavar="KEY=VALUE",
                   help="generator field or experiment option; VALUE is parsed as JSON when possible")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("simulate", help="write one simulated observational dataset as CSV")
    g.add_argument("--scenario", choices=[s.value for s in Scenario], default="I")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--assignment", choices=("logistic", "randomized"), default="logistic")
    g.add_argument("--out", required=True, help="CSV path")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    if args.name and args.experiment and args.name != args.experiment:
        raise ConfigError(f"experiment given twice: {args.name!r} and {args.experiment!r}")
    experiment = args.experiment or args.name or data.get("experiment")
    if experiment is None:
        raise ConfigError("no experiment given")
    data["experiment"] = experiment
    for key in ("seed", "reps", "n", "ns", "alpha", "alphas", "kernel", "bandwidth", "epsilon", "bootstrap", "nystrom_rank"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    overrides = dict(data.get("overrides", {}))
    overrides.update(dict(args.set))
    data["overrides"] = overrides
    return ExperimentConfig.from_dict(data)


def _join_list_values(argv: Sequence[str]) -> list:
    # argparse reads "-1,-0.5" as an unknown flag; bind it to the list option explicitly
    out = []
    it = iter(argv)
    for token in it:
        if token in ("--alphas", "--ns"):
            value = next(it, None)
            out.append(token if value is None else f"{token}={value}")
        else:
            out.append(token)
    return out


def _simulate(parser, args) -> int:
    try:
        config = ScenarioConfig(Scenario(args.scenario), n=args.n, assignment=args.assignment)
    except ValueError as exc:
        parser.error(str(exc))
    data = gen_scenario(config, args.seed)
    try:
        path = write_dataset(args.out, data, comment=f"scenario={args.scenario} n={args.n} seed={args.seed} "
                                                    f"assignment={args.assignment}")
    except OSError as exc:
        print(f"cfk: error: {exc}", file=sys.stderr)
        return 1
    print(f"dataset: {path}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_list_values(sys.argv[1:] if argv is None else argv))
    if args.command == "simulate":
        return _simulate(parser, args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
        paths = run(config, args.out)
    except ConfigError as exc:
        parser.error(str(exc))  # exits with status 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cfk: error: {exc}", file=sys.stderr)
        return 1
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
