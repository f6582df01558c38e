"""Command line entry point: ``visioncomm <subcommand> --out RUN_DIR``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .config import ConfigError, ExperimentConfig
from .neural.training import atomic_write_bytes

log = logging.getLogger("visioncomm")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def resolve_config(args) -> ExperimentConfig:
    """--config wins; otherwise the config saved in the run directory; otherwise defaults."""
    path = args.config
    saved = os.path.join(args.out, "config.json")
    if path is None and os.path.exists(saved):
        path = saved
    cfg = ExperimentConfig.load(path)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_dataset(cfg, args):
    from .dataset import generate
    from .pipeline import data_dir

    atomic_write_bytes(os.path.join(args.out, "config.json"), (cfg.to_json() + "\n").encode())
    manifest = generate(cfg, data_dir(args.out), threads=args.threads)
    for name, info in manifest["splits"].items():
        print(f"{name}: {len(info['trajectories'])} trajectories, {info['uman']} UMAN, {info['vran']} VRAN samples")


def _splits(cfg, run):
    from .pipeline import _load_splits
    return _load_splits(cfg, run)


def cmd_train_uman(cfg, args):
    from .pipeline import train_uman
    splits = _splits(cfg, args.out)
    for m in ([args.m] if args.m else cfg.m_values):
        res = train_uman(cfg, args.out, m, splits)
        print(f"UMAN M={m}: best epoch {res.best_epoch}, valid loss {res.curve[res.best_epoch - 1][2]:.5f}")


def cmd_train_mcumm(cfg, args):
    from .pipeline import train_mcumm
    res = train_mcumm(cfg, args.out)
    print(f"MCUMM: best epoch {res.best_epoch}, valid loss {res.curve[res.best_epoch - 1][2]:.5f}")


def cmd_train_vran(cfg, args):
    from .pipeline import train_vran
    res = train_vran(cfg, args.out)
    print(f"VRAN: best epoch {res.best_epoch}, valid loss {res.curve[res.best_epoch - 1][2]:.5f}")


def cmd_eval_matching(cfg, args):
    from .pipeline import eval_matching
    rep = eval_matching(cfg, args.out)
    for (method, m), u in rep.umac.items():
        print(f"{method:6s} M={m}: UMAC {u:.4f}")
    print(f"RUMM expectation: {rep.rumm_expected:.4f} over {rep.n_samples} samples")


def cmd_eval_allocation(cfg, args):
    from .pipeline import eval_allocation
    rep = eval_allocation(cfg, args.out)
    for (method, u), v in rep.atrr.items():
        print(f"{method:6s} U={u}: ATRR {v:.4f}")
    print(f"matched user boxes: {rep.match_accuracy:.4f}; VBRAM/BTRAM wall time: {rep.time_ratio:.3f}")


def cmd_report(cfg, args):
    from .pipeline import metrics_dir, models_dir, plots_dir
    from .plots import plot_atrr, plot_curves, plot_umac

    made = []
    mdir = metrics_dir(args.out)
    jobs = [(os.path.join(mdir, "matching_metrics.csv"), plot_umac, "umac_vs_m.svg"),
            (os.path.join(mdir, "allocation_metrics.csv"), plot_atrr, "atrr_by_users.svg"),
            (models_dir(args.out), plot_curves, "loss_curves.svg")]
    for src, fn, name in jobs:
        if not os.path.exists(src):
            log.warning("skipping %s: %s not found", name, src)
            continue
        out = os.path.join(plots_dir(args.out), name)
        fn(src, out)
        made.append(out)
    if not made:
        raise FileNotFoundError(f"nothing to report in {args.out}; run the evaluations first")
    for p in made:
        print(p)


def cmd_run(cfg, args):
    """Whole pipeline in one go."""
    cmd_gen_dataset(cfg, args)
    args.m = None
    cmd_train_uman(cfg, args)
    cmd_train_mcumm(cfg, args)
    cmd_train_vran(cfg, args)
    cmd_eval_matching(cfg, args)
    cmd_eval_allocation(cfg, args)
    cmd_report(cfg, args)


COMMANDS = {
    "gen-dataset": (cmd_gen_dataset, "simulate scenes and channels, write the dataset"),
    "train-uman": (cmd_train_uman, "train the heatmap matcher for each M"),
    "train-mcumm": (cmd_train_mcumm, "train the box-index classifier baseline"),
    "train-vran": (cmd_train_vran, "train the allocation network"),
    "eval-matching": (cmd_eval_matching, "UMAC of 3DUMM, MCUMM and RUMM on the test split"),
    "eval-allocation": (cmd_eval_allocation, "ATRR of BTRAM, VBRAM, NBBRAM and RRAM on the test split"),
    "report": (cmd_report, "SVG plots from the metric CSVs"),
    "run": (cmd_run, "every step above in order"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="visioncomm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (default: RUN_DIR/config.json or built-in defaults)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="run", help="run directory (default: ./run)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for dataset generation")
        p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
        if name == "train-uman":
            p.add_argument("--m", type=int, help="train only this sequence length")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = resolve_config(args)
        if args.command == "train-uman" and args.m is not None and args.m not in cfg.m_values:
            raise ConfigError(f"M={args.m} is not in the configured m_values {cfg.m_values}")
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError, ArithmeticError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
