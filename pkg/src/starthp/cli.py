"""``starthp`` command line: experiments, message audit and self-validation.

Exit codes: 0 success, 1 validation failure or I/O error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys

from .exceptions import ConfigParseError, ConfigurationError
from .harness import (
    Experiment, ExperimentConfig, build_config, load_config, run_experiment, summarize,
)

COMMANDS = {
    "sum-rate": Experiment.SUM_RATE,
    "crb": Experiment.CRB,
    "flops": Experiment.FLOPS,
    "ser": Experiment.SER,
    "audit-messages": Experiment.MESSAGE_AUDIT,
}


def _float_list(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text):
    return tuple(x.strip().upper() for x in text.split(",") if x.strip())


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starthp", description="Star decentralized THP for hybrid ISAC: experiments and checks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=_u64, help="base seed (per-trial seed is seed XOR trial)")

    exp = argparse.ArgumentParser(add_help=False)
    exp.add_argument("--out", help="CSV output path")
    exp.add_argument("--trials", type=int, help="Monte-Carlo trials")
    exp.add_argument("--snr", type=_float_list, help="comma-separated SNR grid in dB")
    exp.add_argument("--clusters", type=int, help="number of DUs L")
    exp.add_argument("--algo", type=_name_list,
                     help="comma list of CZF, CHZF_THP, SDHZF_THP, SDHMMSE_THP")
    exp.add_argument("--n-tx", type=int, dest="n_tx", help="total transmit antennas")
    exp.add_argument("--users", type=int, help="number of users K")
    exp.add_argument("--architecture", choices=("hybrid", "digital"))
    exp.add_argument("--workers", type=int, default=None, help="threads for trials")

    for name in COMMANDS:
        sub.add_parser(name, parents=[common, exp], help=f"run the {name} experiment")
    sub.add_parser("validate", parents=[common], help="run the invariant suite")
    return parser


def config_from_args(args, experiment) -> ExperimentConfig:
    base = load_config(args.config) if args.config else None
    system, settings = {}, {"experiment": experiment}
    for flag, key in (("seed", "seed"), ("clusters", "n_clusters"), ("n_tx", "n_tx"),
                      ("users", "n_users"), ("architecture", "architecture")):
        value = getattr(args, flag, None)
        if value is not None:
            system[key] = value
    for flag, key in (("out", "output_path"), ("trials", "n_trials"),
                      ("snr", "snr_grid_db"), ("algo", "algorithms")):
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    return build_config(system, settings, base)


def format_summary(rows) -> str:
    means = summarize(rows)
    lines = [f"{'algorithm':<12} {'snr_db':>7} {'metric':<32} {'mean':>14}"]
    for (alg, snr, metric), value in sorted(
            means.items(), key=lambda kv: (kv[0][2], kv[0][0], -1e300 if kv[0][1] is None else kv[0][1])):
        snr_text = "na" if snr is None else f"{snr:g}"
        lines.append(f"{alg:<12} {snr_text:>7} {metric:<32} {value:>14.6g}")
    return "\n".join(lines)


def _validate(args) -> int:
    from .invariants import run_all

    seed = 0 if args.seed is None else args.seed
    results = run_all(seed)
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}" + (f": {detail}" if detail else ""))
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        print(f"{len(failed)} invariant(s) violated: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} invariants hold")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate":
        return _validate(args)
    try:
        config = config_from_args(args, COMMANDS[args.command])
    except ConfigParseError as exc:
        print(f"starthp: config error: {args.config}: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, ValueError) as exc:
        print(f"starthp: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"starthp: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        rows = run_experiment(config, workers=args.workers)
    except OSError as exc:
        print(f"starthp: I/O error: {exc}", file=sys.stderr)
        return 1
    print(format_summary(rows))
    if config.output_path:
        print(f"wrote {len(rows)} rows to {config.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
