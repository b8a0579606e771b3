"""Command-line entry point.

Exit codes: 0 success, 1 run error (or failed hard audit), 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .audits import run_audits
from .config import ExperimentConfig, load_config
from .harness import format_csv, generate_instance, run_sweep, slope_summary
from .linear import LinearMDPFactorization
from .mdp import ConfigurationError

MODE_OF = {"run-tabular": "tabular", "run-linear": "linear", "run-action": "action"}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regime", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run-tabular", "trajectory-comparison design on a tabular MDP"),
        ("run-linear", "trajectory-comparison design on a linear MDP"),
        ("run-action", "action-comparison design"),
        ("sweep", "grid x seeds sweep with a slope footer"),
        ("audit", "run the property audits"),
        ("gen-instance", "write a generated instance as JSON"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--output", help="output path (overrides the config's output key)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _summary_text(rows: list[dict], cfg: ExperimentConfig) -> str:
    lines = [f"mode={cfg.mode} config_hash={cfg.hash()} runs={len(rows)} "
             f"errors={sum(1 for r in rows if r['error'])}"]
    summary = slope_summary(rows)
    if summary is not None:
        for x, m in zip(summary["values"], summary["medians"]):
            lines.append(f"{cfg['sweep.param']}={x:g} median_gap={m:.6g}")
        lines.append(f"slope={summary['slope']:.6g}")
    return "\n".join(lines) + "\n"


def _run(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.command in MODE_OF:
        overrides.insert(0, f"mode={MODE_OF[args.command]}")
    elif args.command == "audit":
        overrides.insert(0, "mode=audits")
    cfg = load_config(args.config, overrides)
    output = args.output or cfg["output"] or None

    if args.command == "gen-instance":
        seed = cfg["instance.seed"] if cfg["instance.seed"] != "run" else cfg.seeds[0]
        instance = generate_instance(cfg, np.random.default_rng(int(seed)))
        mdp = instance.mdp if isinstance(instance, LinearMDPFactorization) else instance
        _write(mdp.dumps() + "\n", output)
        return 0

    if args.command == "audit":
        results = run_audits(np.random.default_rng(cfg.seeds[0] if cfg.seeds else 0),
                             trials=int(cfg["audit.trials"]), sabotage=cfg["audit.sabotage"],
                             sandwich_seeds=int(cfg["audit.sandwich_seeds"]))
        text = "".join(r.line() + "\n" for r in results)
        _write(text, output)
        if output:
            sys.stdout.write(text)
        return 0 if all(r.passed for r in results if r.hard) else 1

    if args.command == "sweep":
        if cfg.mode == "audits":
            raise ConfigurationError("sweep needs mode tabular, linear or action")
    else:
        # a single run per seed: the grid collapses to the configured value
        param = cfg["sweep.param"]
        cfg = cfg.with_updates({"sweep.values": [cfg[param]]})
    rows = run_sweep(cfg)
    csv_text = format_csv(rows, footer=args.command == "sweep")
    _write(csv_text, output)
    summary = _summary_text(rows, cfg)
    if output:
        Path(str(output) + ".summary.txt").write_text(summary)
    sys.stderr.write(summary)
    errors = [r["error"] for r in rows if r["error"]]
    if errors and args.command != "sweep" and all(e.startswith("ConfigurationError") for e in errors):
        return 2
    return 1 if errors else 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigurationError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as a run error
        sys.stderr.write(f"run error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
