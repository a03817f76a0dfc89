import hashlib
from pathlib import Path

import numpy as np
import pytest
import torch

from iaeilm.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from iaeilm.dataset import (
    decode_record,
    encode_record,
    generate_dataset,
    load_split,
    read_manifest,
    synth_hash,
)
from iaeilm.melody import PitchSequence
from iaeilm.synthworld import synth_generate


def _tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_record_round_trip(tiny_synth):
    pitch = PitchSequence(np.array([0.0, 440.0, 110.0 * 2 ** (1 / 3), 0.0]))
    sample = synth_generate(pitch, 1, tiny_synth, seed=3)
    rec = encode_record(sample, tiny_synth, seed=99)
    back, seed = decode_record(rec)
    assert seed == 99
    assert back.style_id == 1
    assert np.array_equal(back.x0, sample.x0)
    assert np.array_equal(back.pitch.f0_hz, sample.pitch.f0_hz)


def test_generation_is_byte_identical(tiny_synth, tmp_path):
    sizes = {"train": 6, "val": 2, "test": 2}
    generate_dataset(tiny_synth, tmp_path / "a", sizes)
    generate_dataset(tiny_synth, tmp_path / "b", sizes)
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_different_seed_changes_data(tiny_synth, tmp_path):
    from dataclasses import replace
    sizes = {"train": 4, "val": 1, "test": 1}
    generate_dataset(tiny_synth, tmp_path / "a", sizes)
    generate_dataset(replace(tiny_synth, seed=tiny_synth.seed + 1), tmp_path / "b", sizes)
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "b")


def test_manifest_counts_match_disk(tiny_synth, tmp_path):
    sizes = {"train": 5, "val": 3, "test": 2}
    manifest = generate_dataset(tiny_synth, tmp_path, sizes)
    assert sum(s["count"] for s in manifest["splits"].values()) == 10
    for split, meta in manifest["splits"].items():
        on_disk = sorted((tmp_path / split).glob("*.rec"))
        assert len(on_disk) == meta["count"] == sizes[split]
        samples = load_split(tmp_path, split)
        assert len(samples) == meta["count"]
        for s in samples:
            assert s.x0.shape == (tiny_synth.frames, tiny_synth.latent_dim)
    assert read_manifest(tmp_path)["synth_hash"] == synth_hash(tiny_synth)


def test_load_unknown_split(tiny_synth, tmp_path):
    generate_dataset(tiny_synth, tmp_path, {"train": 1, "val": 1, "test": 1})
    with pytest.raises(ValueError, match="unknown split"):
        load_split(tmp_path, "holdout")


def test_styles_cycle_over_samples(tiny_synth, tmp_path):
    generate_dataset(tiny_synth, tmp_path, {"train": 4, "val": 1, "test": 1})
    styles = [s.style_id for s in load_split(tmp_path, "train")]
    assert styles == [i % tiny_synth.num_styles for i in range(4)]


def test_checkpoint_round_trip(tmp_path):
    g = torch.Generator().manual_seed(0)
    state = {
        "a.weight": torch.randn(3, 4, generator=g),
        "b.bias": torch.randn(5, generator=g),
        "scalar": torch.randn((), generator=g),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state)
    back = load_checkpoint(path)
    assert set(back) == set(state)
    for k in state:
        assert torch.equal(back[k], state[k])
    # bit-exact file: saving the loaded state reproduces identical bytes
    save_checkpoint(tmp_path / "again.ckpt", back)
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_magic_and_layout(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": torch.ones(2, 2)})
    raw = path.read_bytes()
    assert raw[:8] == b"IAEILM01"
    assert int.from_bytes(raw[8:12], "little") == 1  # tensor count
    assert int.from_bytes(raw[12:14], "little") == 1  # name length
    assert raw[14:15] == b"w"
    assert raw[15] == 0 and raw[16] == 2  # dtype tag f32, rank 2

    with pytest.raises(CheckpointError, match="magic"):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTMAGIC" + raw[8:])
        load_checkpoint(bad)


def test_checkpoint_rejects_non_f32(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.ckpt", {"w": torch.ones(2, dtype=torch.float64)})
