"""Command-line interface.

Subcommands: gen-data, train, eval, sample, ablate, grad-check.
Exit codes: 0 ok, 1 usage/validation, 2 numerical failure, 3 I/O.
The IAEILM_THREADS environment variable caps torch worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from . import gradcheck, training
from .flow import euler_sample
from .melody import extract_pitch_features, pitch_to_csv, read_pitch_csv
from .metrics import compare
from .synthworld import decode_melody
from .training import ConfigMismatchError, NumericalError, TrainConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    return training.config_from_dict(json.loads(Path(path).read_text()))


def _sync_config_to_dataset(cfg: TrainConfig, data_dir) -> TrainConfig:
    synth = ds.load_synth_config(data_dir)
    backbone = replace(cfg.backbone, latent_dim=synth.latent_dim,
                       num_styles=synth.num_styles)
    return replace(cfg, synth=synth, backbone=backbone)


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    backbone = cfg.backbone
    if getattr(args, "injector", None):
        backbone = replace(backbone, injector=args.injector)
    if getattr(args, "placement", None):
        backbone = replace(backbone, placement=args.placement)
    updates = {"backbone": backbone}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "max_steps", None) is not None:
        updates["max_steps"] = args.max_steps
    if getattr(args, "deterministic", False):
        updates["deterministic"] = True
    if getattr(args, "freeze_backbone", False):
        updates["freeze_backbone"] = True
    return replace(cfg, **updates)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    synth = cfg.synth
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    sizes = {"train": args.train_size, "val": args.val_size, "test": args.test_size}
    manifest = ds.generate_dataset(synth, args.out, sizes)
    print(f"wrote {sum(s['count'] for s in manifest['splits'].values())} samples "
          f"to {args.out} (synth hash {manifest['synth_hash']})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.config is None:
        cfg = _sync_config_to_dataset(cfg, args.data)
    cfg = _apply_overrides(cfg, args)
    record = training.train(cfg, args.data, args.out)
    print(f"final loss {record.losses[-1]:.5f}; checkpoint {record.checkpoint_path}")
    print(f"params total={record.total_params} trainable={record.trainable_params}")
    return 0


def cmd_eval(args) -> int:
    report, rows, meta = training.evaluate_checkpoint(
        args.checkpoint, args.data, split=args.split, steps=args.steps,
        seed=args.seed if args.seed is not None else 0, cfg_scale=args.cfg)
    training.write_report(report, rows, meta, args.out,
                          seed=args.seed if args.seed is not None else 0)
    rpa = "undefined" if report.rpa is None else f"{report.rpa:.4f}"
    rca = "undefined" if report.rca is None else f"{report.rca:.4f}"
    print(f"rpa={rpa} rca={rca} oa={report.oa:.4f} "
          f"({report.n_ref_voiced} ref-voiced / {report.n_frames} frames)")
    return 0


def cmd_sample(args) -> int:
    model, cfg, _ = training.load_model(args.checkpoint)
    pitch = read_pitch_csv(args.pitch_csv)
    feats = torch.from_numpy(extract_pitch_features(pitch)).unsqueeze(0)
    style = torch.tensor([args.style], dtype=torch.long)
    latent = euler_sample(model, style, len(pitch), steps=args.steps,
                          seed=args.seed if args.seed is not None else 0,
                          pitch_feat=feats, cfg_scale=args.cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arr = latent.squeeze(0).numpy()
    np.save(out / "latent.npy", arr)
    decoded = decode_melody(arr, cfg.synth)
    (out / "melody.csv").write_text(pitch_to_csv(decoded))
    rep = compare(pitch, decoded)
    rpa = "undefined" if rep.rpa is None else f"{rep.rpa:.4f}"
    print(f"wrote {out / 'latent.npy'} and {out / 'melody.csv'} (rpa vs input: {rpa})")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    if args.config is None:
        cfg = _sync_config_to_dataset(cfg, args.data)
    cfg = _apply_overrides(cfg, args)
    rows = training.run_ablation(cfg, args.data, args.out, n_seeds=args.seeds)
    print(f"wrote {Path(args.out) / 'ablation.csv'} ({len(rows)} runs)")
    return 0


def cmd_grad_check(args) -> int:
    results, ok = gradcheck.run_all(seed=args.seed if args.seed is not None else 0)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"[{status}] {r.check}/{r.group}: max rel err {r.max_rel_err:.3e} "
              f"(tol {r.rtol:g})")
    if not ok:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    print("all gradient checks passed")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="iaeilm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, out=True):
        p.add_argument("--config", help="JSON training config")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(p)
    p.add_argument("--train-size", type=int, default=ds.DEFAULT_SPLIT_SIZES["train"])
    p.add_argument("--val-size", type=int, default=ds.DEFAULT_SPLIT_SIZES["val"])
    p.add_argument("--test-size", type=int, default=ds.DEFAULT_SPLIT_SIZES["test"])
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p, data=True)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--freeze-backbone", action="store_true")
    p.add_argument("--injector", choices=[i.value for i in training.Injector])
    p.add_argument("--placement", choices=[pl.value for pl in training.Placement])
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a held-out split")
    common(p, data=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--steps", type=int)
    p.add_argument("--cfg", type=float, help="guidance scale")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="generate one latent from a pitch contour")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pitch-csv", required=True)
    p.add_argument("--style", type=int, default=0)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--cfg", type=float)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("ablate", help="train/evaluate the injector ablation matrix")
    common(p, data=True)
    p.add_argument("--seeds", type=int, default=3, help="seeds per variant")
    p.add_argument("--injector", choices=[i.value for i in training.Injector],
                   help=argparse.SUPPRESS)
    p.add_argument("--placement", choices=[pl.value for pl in training.Placement],
                   help=argparse.SUPPRESS)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("IAEILM_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"bad IAEILM_THREADS value: {threads!r}", file=sys.stderr)
            return 1
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ConfigMismatchError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
