"""SPADE placement ablation: control branches with SPADE in different encoder stages.

Needs a run directory that already holds the toy corpus and a base checkpoint
(for example from run_toy_experiment.py). Each variant is trained for every
seed on the shared frozen base and scored by the consistency of images
generated for the real validation masks.

    python3 scripts/run_ablation.py --out runs/toy --steps 1000
"""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from curvexpand import stages
from curvexpand.config import load_config
from curvexpand.nets.config import parse_spade_stages

HERE = Path(__file__).resolve().parent
VARIANTS = {
    "down1": "down1",
    "down1-2": "down1,down2",
    "down1-3": "down1,down2,down3",
    "down1-4": "down1,down2,down3,down4",
    "full": "down1,down2,down3,down4,middle",
}


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", type=Path, default=HERE / "toy.ini")
    p.add_argument("--out", type=Path, default=Path("runs/toy"))
    p.add_argument("--steps", type=int, default=1000, help="control training steps per variant and seed")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", default="down1,full", help="comma list from " + ",".join(VARIANTS))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config, {"run": {"out_dir": str(args.out), "data_dir": str(args.out / "data"),
                                            "eval_every": "0"}}).with_env()
    cfg = replace(cfg, control_train=replace(cfg.control_train, steps=args.steps))
    variants = {v: parse_spade_stages(VARIANTS[v]) for v in args.variants.split(",")}
    seeds = [int(s) for s in args.seeds.split(",")]
    result = stages.run_ablation(cfg, variants, seeds)
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
