"""Run the whole desk-scale toy experiment and print the comparison table.

    python3 scripts/run_toy_experiment.py --out runs/toy
    python3 scripts/run_toy_experiment.py --out runs/toy --reuse   # skip finished stages
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from curvexpand import stages
from curvexpand.config import load_config

HERE = Path(__file__).resolve().parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", type=Path, default=HERE / "toy.ini")
    p.add_argument("--out", type=Path, default=Path("runs/toy"))
    p.add_argument("--reuse", action="store_true", help="keep outputs of stages that already finished")
    p.add_argument("--eval-every", type=int, default=0, help="feature-distance logging interval during training")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config, {"run": {
        "out_dir": str(args.out), "data_dir": str(args.out / "data"), "eval_every": str(args.eval_every),
    }}).with_env()
    start = time.perf_counter()
    result = stages.run_all(cfg, reuse=args.reuse)
    e = result["expansion"]
    print((Path(cfg.out_dir) / "reports" / "comparison.md").read_text())
    print(json.dumps({k: e[k] for k in ("consistency_scp", "consistency_text_only", "consistency_real_val",
                                        "rejections", "n_synth")}, indent=2))
    print(f"total {(time.perf_counter() - start) / 60:.1f} min; outputs in {cfg.out_dir}")


if __name__ == "__main__":
    main()
