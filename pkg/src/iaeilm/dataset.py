"""On-disk dataset format.

One binary record per sample:

    u32 T | u32 P | u32 S | u32 style_id | i64 seed
    | T*(P+S) little-endian f32 (the clean latent, row-major)
    | u32 byte length | pitch CSV block (UTF-8, header ``frame,f0_hz``)

plus a ``manifest.json`` at the dataset root listing the splits, the synth
configuration, and its hash. Regeneration from the same seed is
byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .melody import pitch_from_csv, pitch_to_csv
from .synthworld import SynthConfig, SynthSample, random_pitch_contour, synth_generate

_HEADER = struct.Struct("<IIIIq")

DEFAULT_SPLIT_SIZES = {"train": 2000, "val": 100, "test": 100}


def synth_hash(cfg: SynthConfig) -> str:
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def encode_record(sample: SynthSample, cfg: SynthConfig, seed: int) -> bytes:
    t = sample.x0.shape[0]
    head = _HEADER.pack(t, cfg.pitch_bins, cfg.style_channels, sample.style_id, seed)
    payload = np.ascontiguousarray(sample.x0, dtype="<f4").tobytes()
    csv_block = pitch_to_csv(sample.pitch).encode("utf-8")
    return head + payload + struct.pack("<I", len(csv_block)) + csv_block


def decode_record(data: bytes) -> tuple[SynthSample, int]:
    t, p, s, style_id, seed = _HEADER.unpack_from(data, 0)
    off = _HEADER.size
    n = t * (p + s)
    x0 = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(t, p + s).copy()
    off += 4 * n
    (csv_len,) = struct.unpack_from("<I", data, off)
    off += 4
    pitch = pitch_from_csv(data[off : off + csv_len].decode("utf-8"))
    return SynthSample(x0, pitch, style_id), seed


def _sample_seed(base_seed: int, split_index: int, i: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(split_index, i))
    return int(ss.generate_state(1)[0])


def generate_dataset(cfg: SynthConfig, out_dir, split_sizes: dict[str, int] | None = None,
                     seed: int | None = None) -> dict:
    """Write train/val/test records and the manifest; returns the manifest dict.

    Styles cycle deterministically over samples; per-sample randomness is
    derived from (seed, split, index) so any subset regenerates identically.
    """
    out = Path(out_dir)
    sizes = dict(split_sizes or DEFAULT_SPLIT_SIZES)
    base_seed = cfg.seed if seed is None else seed
    for split_index, (split, count) in enumerate(sorted(sizes.items())):
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            rec_seed = _sample_seed(base_seed, split_index, i)
            style_id = i % cfg.num_styles
            pitch = random_pitch_contour(cfg, style_id, seed=rec_seed)
            sample = synth_generate(pitch, style_id, cfg, seed=rec_seed + 1)
            (split_dir / f"{i:05d}.rec").write_bytes(encode_record(sample, cfg, rec_seed))
    manifest = {
        "format": 1,
        "seed": base_seed,
        "synth": dataclasses.asdict(cfg),
        "synth_hash": synth_hash(cfg),
        "splits": {name: {"count": n} for name, n in sorted(sizes.items())},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def read_manifest(data_dir) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text())


def load_synth_config(data_dir) -> SynthConfig:
    return SynthConfig(**read_manifest(data_dir)["synth"])


def load_split(data_dir, split: str) -> list[SynthSample]:
    root = Path(data_dir)
    manifest = read_manifest(root)
    if split not in manifest["splits"]:
        raise ValueError(f"unknown split {split!r}; have {sorted(manifest['splits'])}")
    count = manifest["splits"][split]["count"]
    samples = []
    for i in range(count):
        path = root / split / f"{i:05d}.rec"
        sample, _ = decode_record(path.read_bytes())
        samples.append(sample)
    return samples
