"""Command-line entry point: ``dvevio {simulate,run,experiment,report}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from dvevio.config import from_ini
from dvevio.dataset import POSE_HEADER, read_csv
from dvevio.errors import DveVioError
from dvevio.experiment import aggregate, read_report, run_experiment
from dvevio.pipeline import INSERTIONS_HEADER, METRICS_HEADER, RunConfig, run_once
from dvevio.sim.scenario import PRESETS, ScenarioConfig, render_sequence

log = logging.getLogger("dvevio")


def _on_off(text):
    low = text.lower()
    if low not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return low == "on"


def build_parser():
    parser = argparse.ArgumentParser(prog="dvevio", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic dataset")
    p.add_argument("--preset", choices=sorted(PRESETS), default="noisy")
    p.add_argument("--config", type=Path, help="scenario INI overriding the preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)

    def run_args(p):
        p.add_argument("--config", type=Path, help="run INI file")
        p.add_argument("--dataset", type=Path)
        p.add_argument("--mask", type=_on_off)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)

    p = sub.add_parser("run", help="single estimator trial")
    run_args(p)
    p.add_argument("--debug-masks", action="store_true")

    p = sub.add_parser("experiment", help="mask ON/OFF trial study")
    run_args(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="re-aggregate a finished experiment")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    return parser


def _run_config(args):
    cfg = from_ini(RunConfig, args.config) if args.config else RunConfig()
    changes = {}
    if args.dataset is not None:
        changes["dataset_path"] = str(args.dataset)
    if args.mask is not None:
        changes["mask_enabled"] = args.mask
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "debug_masks", False):
        changes["debug_masks"] = True
    cfg = dataclasses.replace(cfg, **changes)
    if not cfg.dataset_path:
        raise DveVioError("no dataset given (use --dataset or [run] dataset_path)")
    return cfg


def cmd_simulate(args):
    cfg = PRESETS[args.preset]
    if args.config:
        cfg = from_ini(ScenarioConfig, args.config, base=cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = render_sequence(cfg, args.out)
    print(out)


def cmd_run(args):
    cfg = _run_config(args)
    out = Path(cfg.output_dir)
    result = run_once(cfg, cfg.seed_base, out)
    # outputs must parse back
    read_csv(out / "pose_estimate.csv", POSE_HEADER)
    read_csv(out / "metrics.csv", METRICS_HEADER)
    read_csv(out / "insertions.csv", INSERTIONS_HEADER, allow_empty=True)
    print(f"frames = {len(result.poses)}")
    print(f"insertions = {result.total_insertions}")
    print(f"terminal_d_optimality = {result.terminal_d_optimality:.9g}")


def cmd_experiment(args):
    cfg = _run_config(args)
    report = run_experiment(cfg, cfg.output_dir, jobs=args.jobs)
    read_report(Path(cfg.output_dir) / "report.txt")
    for k, v in report.items():
        print(f"{k} = {v}")


def cmd_report(args):
    trials, seed = args.trials, args.seed
    cfg_path = args.out / "experiment.cfg"
    if cfg_path.is_file():
        cfg = from_ini(RunConfig, cfg_path)
        trials = trials if trials is not None else cfg.trials
        seed = seed if seed is not None else cfg.seed_base
    if trials is None:
        raise DveVioError(f"{cfg_path} missing; pass --trials")
    report = aggregate(args.out, trials, seed or 0)
    for k, v in report.items():
        print(f"{k} = {v}")


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "experiment": cmd_experiment, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (DveVioError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
