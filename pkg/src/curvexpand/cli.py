"""``curvexpand`` command line: toygen, ingest, train-base, train-control, expand, eval, report.

Exit codes: 0 success, 1 validation error (bad config, data or arguments),
2 runtime failure (divergence, degenerate generator, anything unexpected).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from . import stages
from .captions import CaptionError
from .config import load_config
from .data import DatasetError, ingest_dataset, split_dataset
from .diffusion import ScheduleError
from .nets.blocks import ConfigError

log = logging.getLogger("curvexpand")

VALIDATION_ERRORS = (ConfigError, DatasetError, CaptionError, ScheduleError, ValueError, FileNotFoundError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--data-dir", help="dataset root (manifest.json, images/, masks/)")
    p.add_argument("--out", dest="out_dir", help="run output directory (overridden by $CURVEXPAND_OUTPUT_ROOT)")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spade-stages", help="comma list from down1..downK,middle")
    p.add_argument("--steps", type=int, help="training steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--eval-every", type=int, help="steps between feature-distance evaluations (0 disables)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvexpand", description="Curvilinear segmentation dataset expansion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="generate the procedural toy corpus with a train/val split")
    _common(p)
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--size", type=int, help="image size (power of two >= 16)")
    p.add_argument("--train-fraction", type=float)

    p = sub.add_parser("ingest", help="resize a user dataset to canonical size and write its manifest")
    _common(p)
    p.add_argument("root", type=Path, help="directory with images/, masks/, captions.jsonl")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--split-seed", type=int)

    for name, phase in (("train-base", "base"), ("train-control", "control")):
        p = sub.add_parser(name, help=f"train the {phase} phase and write its checkpoint")
        _common(p)
        _model_flags(p)

    p = sub.add_parser("expand", help="synthesize (k-1)*n pairs from recombined captions")
    _common(p)
    p.add_argument("--ratio", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--no-text-only", action="store_true", help="skip the text-only comparison set")

    p = sub.add_parser("eval", help="train segmenters per method/ratio/seed and tabulate")
    _common(p)
    p.add_argument("--methods", help="comma list of " + ",".join(stages.METHODS))
    p.add_argument("--ratios", help="comma list of expansion ratios")
    p.add_argument("--seeds", help="comma list of segmenter seeds")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("report", help="rebuild tables and plots from stored evaluation reports")
    _common(p)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    def s(v):
        return None if v is None else str(v)

    o: dict[str, dict[str, str | None]] = {"run": {"data_dir": s(args.data_dir), "out_dir": s(args.out_dir)}}
    cmd = args.command
    if cmd == "toygen":
        o["run"].update(n_samples=s(args.n), train_fraction=s(args.train_fraction))
        o["toy"] = {"seed": s(args.seed), "size": s(args.size)}
    elif cmd == "ingest":
        o["run"].update(train_fraction=s(args.train_fraction), split_seed=s(args.split_seed))
    elif cmd in ("train-base", "train-control"):
        section = "base_train" if cmd == "train-base" else "control_train"
        o[section] = {"steps": s(args.steps), "lr": s(args.lr)}
        o["model"] = {"spade_stages": s(args.spade_stages)}
        o["run"].update(train_seed=s(args.seed), eval_every=s(args.eval_every))
    elif cmd == "expand":
        o["expand"] = {"ratio": s(args.ratio), "master_seed": s(args.master_seed),
                       "text_only": "false" if args.no_text_only else None}
    elif cmd == "eval":
        o["eval"] = {"methods": args.methods, "ratios": args.ratios, "seeds": args.seeds}
        o["segmenter"] = {"epochs": s(args.epochs)}
    return {k: {kk: vv for kk, vv in v.items() if vv is not None} for k, v in o.items()}


def _dispatch(args, cfg) -> dict:
    cmd = args.command
    if cmd == "toygen":
        m = stages.run_toygen(cfg)
        return {"samples": len(m), "train": len(m.split("train")), "val": len(m.split("val")), "root": str(m.root)}
    if cmd == "ingest":
        m = ingest_dataset(args.root, args.size)
        if not m.split("train").samples:
            m = split_dataset(m, cfg.train_fraction, cfg.split_seed)
            m.save()
        return {"samples": len(m), "manifest": str(Path(m.root) / "manifest.json")}
    if cmd == "train-base":
        r = stages.run_train_base(cfg)
        return {"steps": len(r.losses), "final_loss": r.losses[-1] if r.losses else None}
    if cmd == "train-control":
        r = stages.run_train_control(cfg)
        return {"steps": len(r.losses), "final_loss": r.losses[-1] if r.losses else None, "base_unchanged": True}
    if cmd == "expand":
        return stages.run_expand(cfg)
    if cmd == "eval":
        rows, failures = stages.run_eval(cfg)
        return {"rows": len(rows), "failures": failures}
    if cmd == "report":
        return {"rows": len(stages.write_report(cfg))}
    raise ConfigError(f"unknown command {cmd}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.model.validate()
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "ingest" and not args.root.is_dir():
        print(f"error: dataset root {args.root} does not exist", file=sys.stderr)
        return 1
    lock_root = {"toygen": Path(cfg.data_dir), "ingest": getattr(args, "root", None)}.get(args.command, Path(cfg.out_dir))
    lock_root.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(lock_root / ".curvexpand.lock"), timeout=0):
            summary = _dispatch(args, cfg)
    except Timeout:
        print(f"error: another curvexpand command holds {lock_root}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures surface with diagnostics
        log.debug("runtime failure", exc_info=True)
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    if summary.get("failures"):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
