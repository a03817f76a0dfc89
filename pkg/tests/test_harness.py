import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from iaeilm.backbone import BackboneConfig, adapter_param
from iaeilm.cli import main
from iaeilm.conditioning import Injector
from iaeilm.dataset import generate_dataset
from iaeilm.synthworld import SynthConfig
from iaeilm.training import (
    ConfigMismatchError,
    NumericalError,
    RunRecord,
    TrainConfig,
    build_model,
    config_from_dict,
    config_hash,
    config_to_dict,
    evaluate_checkpoint,
    run_ablation,
    train,
)


def micro_config(**overrides) -> TrainConfig:
    synth = SynthConfig(frames=32, pitch_bins=64, style_channels=8, num_styles=2, seed=7)
    backbone = BackboneConfig(num_blocks=2, d_model=16, heads=2, ffn_mult=2,
                              m_width=8, latent_dim=synth.latent_dim, num_styles=2,
                              enc_channels=(4,), enc_kernel=3)
    base = dict(lr=1e-3, warmup_steps=2, batch_size=4, max_steps=8,
                checkpoint_every=4, sample_steps=4, seed=1,
                backbone=backbone, synth=synth)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def micro_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("microdata")
    cfg = micro_config()
    generate_dataset(cfg.synth, path, {"train": 8, "val": 2, "test": 4})
    return path


def test_config_hash_changes_iff_any_field_changes():
    base = micro_config()
    assert config_hash(base) == config_hash(micro_config())
    assert config_hash(base) != config_hash(micro_config(lr=2e-3))
    assert config_hash(base) != config_hash(micro_config(seed=2))
    tweaked = replace(base, backbone=replace(base.backbone, injector=Injector.EA))
    assert config_hash(base) != config_hash(tweaked)


def test_config_dict_round_trip():
    cfg = micro_config(freeze_backbone=True)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert config_hash(again) == config_hash(cfg)
    assert again.backbone.injector is Injector.IA_EILM


def test_config_validation():
    with pytest.raises(ValueError):
        micro_config(warmup_steps=100, max_steps=10)
    with pytest.raises(ValueError):
        micro_config(backbone=BackboneConfig(latent_dim=13))


def test_train_smoke_and_step0_zero_init_equality(micro_data, tmp_path):
    cfg = micro_config(max_steps=2)
    rec = train(cfg, micro_data, tmp_path / "cond")
    rec_none = train(
        replace(cfg, backbone=replace(cfg.backbone, injector=Injector.NONE)),
        micro_data, tmp_path / "uncond")
    assert abs(rec.losses[0] - rec_none.losses[0]) <= 1e-6
    assert (tmp_path / "cond" / "run.json").exists()
    loaded = json.loads((tmp_path / "cond" / "run.json").read_text())
    assert loaded["config_hash"] == config_hash(cfg)
    assert len(loaded["losses"]) == 2


def test_training_is_deterministic_in_process(micro_data, tmp_path):
    cfg = micro_config(deterministic=True)
    rec_a = train(cfg, micro_data, tmp_path / "a")
    rec_b = train(cfg, micro_data, tmp_path / "b")
    assert rec_a.losses == rec_b.losses
    ck_a = Path(rec_a.checkpoint_path).read_bytes()
    ck_b = Path(rec_b.checkpoint_path).read_bytes()
    assert ck_a == ck_b


def test_nan_loss_aborts_with_dump(micro_data, tmp_path, monkeypatch):
    import iaeilm.training as training_mod

    def poisoned(pred, state):
        return torch.full((), float("nan"), requires_grad=True)

    monkeypatch.setattr(training_mod, "fm_loss", poisoned)
    with pytest.raises(NumericalError, match="step 0"):
        train(micro_config(), micro_data, tmp_path)
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert dump["step"] == 0 and len(dump["batch_indices"]) == 4


def test_freeze_backbone_contract(micro_data, tmp_path):
    cfg = micro_config(freeze_backbone=True, max_steps=6)
    rec = train(cfg, micro_data, tmp_path)
    assert rec.frozen_checksum_before == rec.frozen_checksum_after

    model = build_model(cfg)
    adapter = sum(p.numel() for n, p in model.named_parameters() if adapter_param(n))
    total = sum(p.numel() for p in model.parameters())
    assert rec.trainable_params == adapter
    assert rec.total_params == total
    assert adapter < total

    # adapters must actually have moved
    unfrozen = train(micro_config(max_steps=6), micro_data, tmp_path / "u")
    assert unfrozen.frozen_checksum_before is None
    assert rec.losses[0] == pytest.approx(unfrozen.losses[0], abs=1e-7)


def test_checkpoint_pruning_keeps_last_three(micro_data, tmp_path):
    cfg = micro_config(max_steps=10, checkpoint_every=2, keep_checkpoints=3)
    rec = train(cfg, micro_data, tmp_path)
    kept = sorted(p.name for p in (tmp_path / "checkpoints").glob("*.ckpt"))
    assert kept == ["step_000006.ckpt", "step_000008.ckpt", "step_000010.ckpt"]
    assert rec.checkpoint_path.endswith("step_000010.ckpt")


def test_evaluate_checkpoint_and_hash_guard(micro_data, tmp_path):
    cfg = micro_config(max_steps=4)
    rec = train(cfg, micro_data, tmp_path / "run")
    report, rows, meta = evaluate_checkpoint(rec.checkpoint_path, micro_data, steps=4)
    assert len(rows) == 4
    assert 0.0 <= report.oa <= 1.0
    assert meta["config_hash"] == config_hash(cfg)

    # double evaluation is deterministic
    report2, _, _ = evaluate_checkpoint(rec.checkpoint_path, micro_data, steps=4)
    assert (report.rpa, report.rca, report.oa) == (report2.rpa, report2.rca, report2.oa)

    other = tmp_path / "otherdata"
    generate_dataset(SynthConfig(frames=16, pitch_bins=64, style_channels=8,
                                 num_styles=2, seed=9), other,
                     {"train": 1, "val": 1, "test": 1})
    with pytest.raises(ConfigMismatchError):
        evaluate_checkpoint(rec.checkpoint_path, other)


def test_ablation_matrix_schema(micro_data, tmp_path):
    cfg = micro_config(max_steps=2, sample_steps=2)
    rows = run_ablation(cfg, micro_data, tmp_path, n_seeds=1)
    assert len(rows) == 4
    assert {r["variant"] for r in rows} == {"ea", "eilm_static", "ia_eilm", "ia_eilm_attn"}
    for r in rows:
        for key in ("rpa", "rca", "oa"):
            if r[key] is not None:
                assert 0.0 <= r[key] <= 1.0
    lines = (tmp_path / "ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 4 + 8  # header + runs + mean/std per variant
    assert lines[0].startswith("variant,placement,seed,rpa,rca,oa")


def test_cli_full_pipeline(micro_data, tmp_path, capsys):
    cfg = micro_config(max_steps=4)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config_to_dict(cfg)))

    data_dir = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(data_dir),
                 "--train-size", "6", "--val-size", "2", "--test-size", "2"]) == 0

    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--data", str(data_dir),
                 "--out", str(run_dir)]) == 0
    ckpt = json.loads((run_dir / "run.json").read_text())["checkpoint_path"]

    eval_dir = tmp_path / "eval"
    assert main(["eval", "--checkpoint", ckpt, "--data", str(data_dir),
                 "--out", str(eval_dir), "--steps", "4"]) == 0
    report = json.loads((eval_dir / "report.json").read_text())
    assert set(report) == {"rpa", "rca", "oa", "n_ref_voiced", "n_frames",
                           "config_hash", "seed"}
    assert (eval_dir / "per_sample.csv").exists()

    pitch_csv = tmp_path / "pitch.csv"
    from iaeilm.melody import write_pitch_csv
    from iaeilm.synthworld import random_pitch_contour
    write_pitch_csv(pitch_csv, random_pitch_contour(cfg.synth, 0, seed=3))
    out_dir = tmp_path / "sampled"
    assert main(["sample", "--checkpoint", ckpt, "--pitch-csv", str(pitch_csv),
                 "--style", "1", "--steps", "4", "--out", str(out_dir)]) == 0
    latent = np.load(out_dir / "latent.npy")
    assert latent.shape == (cfg.synth.frames, cfg.synth.latent_dim)
    assert (out_dir / "melody.csv").exists()


def test_cli_exit_codes(micro_data, tmp_path):
    assert main(["no-such-command"]) == 1
    assert main(["train", "--data", str(micro_data)]) == 1  # missing --out
    # checkpoint/dataset mismatch -> numerical failure
    cfg = micro_config(max_steps=2)
    rec = train(cfg, micro_data, tmp_path / "r")
    other = tmp_path / "other"
    generate_dataset(SynthConfig(frames=16, pitch_bins=64, style_channels=8,
                                 num_styles=2, seed=11), other,
                     {"train": 1, "val": 1, "test": 1})
    assert main(["eval", "--checkpoint", rec.checkpoint_path, "--data", str(other),
                 "--out", str(tmp_path / "e")]) == 2
    # unreadable dataset path -> I/O error
    assert main(["train", "--data", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "x")]) == 3


def test_cli_threads_env(micro_data, tmp_path, monkeypatch):
    monkeypatch.setenv("IAEILM_THREADS", "1")
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--train-size", "1",
                 "--val-size", "1", "--test-size", "1"]) == 0
    assert torch.get_num_threads() == 1
    monkeypatch.setenv("IAEILM_THREADS", "bogus")
    assert main(["grad-check"]) == 1


def test_run_record_round_trip(tmp_path):
    rec = RunRecord(config={"a": 1}, config_hash="x", synth_hash="y", losses=[1.0],
                    wall_clock_s=0.5, checkpoint_path="c", total_params=10,
                    trainable_params=5)
    rec.save(tmp_path / "run.json")
    loaded = json.loads((tmp_path / "run.json").read_text())
    assert loaded["trainable_params"] == 5
