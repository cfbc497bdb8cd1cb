"""Command-line entry point: ``qsdlab {spectral,simulate,ldp,validate,compare}``."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from qsdlab.config import RunConfig
from qsdlab.errors import ConfigError, QsdlabError
from qsdlab.experiments import compare, load_report, run
from qsdlab.io import dumps, write_csv

EXIT_FAILED_CHECKS = 1
EXIT_CONFIG = 2
EXIT_ERROR = 3

EXPERIMENTS = ("spectral", "simulate", "ldp", "validate")


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (e.g. ``interval_brownian``)."""
    return Path(str(resources.files("qsdlab") / "configs" / f"{name}.json"))


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsdlab", description="Quasi-stationary and quasi-ergodic laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", required=True,
                       help="JSON run config, or bundled:<name> for a shipped config")
        s.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        s.add_argument("--out", help="output directory (default: config 'output' or ./qsdlab-out)")
        s.add_argument("--threads", type=_positive, help="worker threads (scheduling only)")
    c = sub.add_parser("compare", help="tabulate metric deltas between two reports")
    c.add_argument("report_a", help="summary.json or a directory containing one")
    c.add_argument("report_b")
    c.add_argument("--out", help="write compare.csv here")
    c.add_argument("--pair", action="append", default=[], metavar="A=B",
                   help="compare metric A of the first report with metric B of the second")
    return p


def _load(arg: str, command: str, seed: int | None) -> RunConfig:
    path = bundled_config(arg.split(":", 1)[1]) if arg.startswith("bundled:") else Path(arg)
    cfg = RunConfig.load(path)
    data = cfg.to_dict()
    changed = False
    if data["experiment"] != command:
        data["experiment"] = command
        changed = True
    if seed is not None:
        data.setdefault("rng", {})["seed"] = seed
        changed = True
    return RunConfig.from_dict(data, cfg.base_dir) if changed else cfg


def _cmd_run(args) -> int:
    cfg = _load(args.config, args.command, args.seed)
    out = args.out or cfg.data.get("output") or "qsdlab-out"
    rep = run(cfg, out, threads=args.threads)
    for c in rep.checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['metric']} {c['op']} value={c['value']!r} tol={c['tol']!r}")
    print(f"{rep.experiment}: {'passed' if rep.passed else 'FAILED'} "
          f"({len(rep.checks)} checks, {rep.wall_clock:.2f} s) -> {out}")
    return 0 if rep.passed else EXIT_FAILED_CHECKS


def _cmd_compare(args) -> int:
    pairs = None
    if args.pair:
        try:
            pairs = dict(item.split("=", 1) for item in args.pair)
        except ValueError:
            raise ConfigError("--pair expects METRIC_A=METRIC_B") from None
    cmp = compare(load_report(args.report_a), load_report(args.report_b), pairs=pairs)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "compare.csv", ["metric", "a", "b", "delta", "combined_tolerance", "flagged"],
                  ([r["metric"], r["a"], r["b"], r["delta"], r["combined_tolerance"], r["flagged"]]
                   for r in cmp.rows))
    sys.stdout.write(dumps(cmp.to_dict()))
    return 0 if not cmp.flagged else EXIT_FAILED_CHECKS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_run(args)
    except ConfigError as exc:
        print(f"qsdlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QsdlabError as exc:
        print(f"qsdlab: {exc.module} error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
