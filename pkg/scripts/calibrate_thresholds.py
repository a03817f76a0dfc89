#!/usr/bin/env python3
"""Calibrate the efficacy thresholds used by the acceptance suite.

Reports (a) the oracle-generator upper bound: re-render each held-out pitch
contour through the synth world and decode it, which bounds what any model
can score; and (b) the chance floor: an untrained unconditional model.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from iaeilm.conditioning import Injector
from iaeilm.dataset import generate_dataset, load_split
from iaeilm.metrics import aggregate, compare, evaluate_model
from iaeilm.synthworld import decode_melody, synth_generate
from iaeilm.training import TrainConfig, build_model


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", default="runs/data")
    parser.add_argument("--steps", type=int, default=32)
    args = parser.parse_args()

    cfg = TrainConfig()
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").exists():
        generate_dataset(cfg.synth, data_dir, {"train": 2000, "val": 100, "test": 100})
    samples = load_split(data_dir, "test")

    reports = []
    for i, s in enumerate(samples):
        regen = synth_generate(s.pitch, s.style_id, cfg.synth, seed=50_000 + i)
        reports.append(compare(s.pitch, decode_melody(regen.x0, cfg.synth)))
    upper = aggregate(reports)
    print(f"oracle upper bound : rpa={upper.rpa:.4f} rca={upper.rca:.4f} oa={upper.oa:.4f}")

    uncond = build_model(replace(cfg, backbone=replace(cfg.backbone,
                                                       injector=Injector.NONE)))
    chance, _ = evaluate_model(uncond, samples, cfg.synth, steps=args.steps, seed=0)
    print(f"untrained floor    : rpa={chance.rpa:.4f} rca={chance.rca:.4f} oa={chance.oa:.4f}")
    print(f"analytic chance rpa: ~{2 * 50 / (1200 * 4.169925):.4f} "
          "(100-cent window over the log range)")


if __name__ == "__main__":
    main()
