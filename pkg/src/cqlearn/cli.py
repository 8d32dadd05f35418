"""Command-line experiment harness.

Usage::

    cqlearn list
    cqlearn run --experiment NAME [--seed S] [--trials N] [--out DIR]
                [--backend B] [--eps E] [--delta D] [--workers W]
                [--config FILE]

Configuration files hold ``key = value`` lines with the fields of
:class:`cqlearn.experiments.ExperimentConfig`; flags override file values.
Exit codes: 0 when the experiment's criterion holds, 2 when it fails and 1 on
configuration errors.
"""
import argparse
import sys

from .experiments import REGISTRY, ConfigError, ExperimentConfig, list_experiments, parse_config_text, \
    run_experiment, write_outputs
from .qcore import ContractError

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2

_FLAG_KEYS = ("experiment", "seed", "trials", "out", "backend", "eps", "delta", "workers")


def _parser():
    p = argparse.ArgumentParser(prog="cqlearn", description="Run registered validation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list registered experiments")
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--experiment")
    run.add_argument("--seed")
    run.add_argument("--trials")
    run.add_argument("--out")
    run.add_argument("--backend")
    run.add_argument("--eps")
    run.add_argument("--delta")
    run.add_argument("--workers", help="worker processes (capped by CQLEARN_THREADS)")
    run.add_argument("--config", help="key = value configuration file")
    return p


def format_listing():
    rows = list_experiments()
    width = max(len(n) for n, _, _ in rows)
    lines = [f"{'experiment'.ljust(width)}  trials  checks"]
    lines += [f"{n.ljust(width)}  {t:>6}  {a}" for n, a, t in rows]
    return "\n".join(lines)


def build_config(args):
    """Merge the configuration file and flags into an ExperimentConfig."""
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from None
    for key in _FLAG_KEYS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if not values.get("experiment"):
        raise ConfigError("no experiment given (use --experiment or 'experiment = ...' in --config)")
    return ExperimentConfig.from_mapping(values)


def main(argv=None, out=sys.stdout, err=sys.stderr):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command == "list":
        print(format_listing(), file=out)
        return EXIT_OK
    try:
        cfg = build_config(args)
        if cfg.experiment not in REGISTRY:
            raise ConfigError(f"unknown experiment {cfg.experiment!r}")
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=err)
        if "unknown experiment" in str(exc):
            print("registered experiments:\n" + format_listing(), file=err)
        return EXIT_CONFIG
    except ContractError as exc:
        print(f"configuration error: {exc}", file=err)
        return EXIT_CONFIG
    paths = write_outputs(result, cfg.out)
    status = "PASS" if result.passed else "FAIL"
    print(f"{status} {result.name}: {result.summary}", file=out)
    for p in paths:
        print(f"wrote {p}", file=out)
    return EXIT_OK if result.passed else EXIT_FAILED


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
