#!/usr/bin/env python3
"""Reproduce the injector/placement ablation at the default desk scale.

Generates the dataset if needed, trains {ea, eilm_static, ia_eilm} before the
FFN plus ia_eilm before self-attention, 3 seeds each, and writes
ablation.csv. Expect roughly two hours on a 2-core CPU.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from iaeilm.dataset import generate_dataset
from iaeilm.training import TrainConfig, run_ablation


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--data", default="runs/data")
    parser.add_argument("--seeds", type=int, default=3)
    args = parser.parse_args()

    cfg = TrainConfig()
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").exists():
        print(f"generating dataset in {data_dir}")
        generate_dataset(cfg.synth, data_dir, {"train": 2000, "val": 100, "test": 100})
    rows = run_ablation(cfg, data_dir, args.out, n_seeds=args.seeds)
    print(f"\nwrote {Path(args.out) / 'ablation.csv'}")
    for row in rows:
        print(f"{row['variant']:>14} seed {row['seed']}: rpa={row['rpa']:.4f} "
              f"rca={row['rca']:.4f} oa={row['oa']:.4f}")


if __name__ == "__main__":
    main()
