"""Desk-scale stand-in encoder.

Produces a 2-layer embedding stack from log-mel statistics so the full
pipeline (synthesize -> features -> train -> evaluate) runs with no external
model. Real encoder embeddings can replace these files because everything
downstream consumes only the LSTK format.

Layer order (each a length-n_mels vector):
  0: saturated per-band peak level over frames (band presence)
  1: the same peak level max-pooled over neighboring bands, so evidence
     for a source spreads across its local band neighborhood

Each layer is standardized across bands and multiplied by a fixed output
scale. The head trains with a small, fixed learning rate, so the embedding
scale is what sets the effective step size; leaving the raw statistics
unscaled stalls training.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d

from . import audio_io, dsp
from .corpus import AudioClip, InstrumentClass, labels_to_multihot
from .errors import ManifestError, PolymixError
from .model import LayerStack, read_lstk, write_lstk

N_PSEUDO_LAYERS = 2


@dataclass(frozen=True)
class PseudoEncoderConfig:
    n_fft: int = dsp.DEFAULT_N_FFT
    hop: int = dsp.DEFAULT_HOP
    n_mels: int = dsp.DEFAULT_N_MELS
    log_gain: float = 10.0
    saturation: float = 1.0
    pool_halfwidth: int = 3
    output_scale: float = 10.0


def encode_clip(clip: AudioClip,
                config: PseudoEncoderConfig = PseudoEncoderConfig()) -> np.ndarray:
    """[2 x n_mels] float32 presence statistics of the log-mel spectrogram."""
    spec = dsp.stft(clip, n_fft=config.n_fft, hop=config.hop)
    mel = dsp.mel_spectrogram(spec, n_mels=config.n_mels)
    logmel = np.log1p(config.log_gain * mel)  # [n_mels x n_frames]
    peak = logmel.max(axis=1)
    # tanh flattens loud-vs-quiet source differences into near-binary presence
    pooled = maximum_filter1d(peak, size=2 * config.pool_halfwidth + 1)
    stack = np.stack([
        np.tanh(peak / config.saturation),
        np.tanh(pooled / config.saturation),
    ])
    # per-layer standardization; 1e-6 guards all-silent layers
    stack -= stack.mean(axis=1, keepdims=True)
    stack /= stack.std(axis=1, keepdims=True) + 1e-6
    stack *= config.output_scale
    return stack.astype(np.float32)


def export_features(mixture_manifest: str | Path, out_dir: str | Path,
                    config: PseudoEncoderConfig = PseudoEncoderConfig(),
                    threads: int = 1) -> Path:
    """Write one `<id>.lstk` per mixture plus a features.jsonl index.

    Each index line carries the mixture id, the embedding path relative to
    the index, and the label list, which is all training needs.
    """
    mixture_manifest = Path(mixture_manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    with open(mixture_manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append((obj["id"], obj["path"], obj["labels"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ManifestError(f"{mixture_manifest}:{lineno}: {exc}") from exc

    def encode_one(entry):
        mid, rel, _ = entry
        clip = audio_io.read_wav(mixture_manifest.parent / rel)
        stack = encode_clip(clip, config)
        write_lstk(out_dir / f"{mid}.lstk", stack)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(encode_one, entries))
    else:
        for entry in entries:
            encode_one(entry)

    index_path = out_dir / "features.jsonl"
    with open(index_path, "w", encoding="utf-8", newline="\n") as fh:
        for mid, _, labels in entries:
            fh.write(json.dumps({"id": mid, "path": f"{mid}.lstk",
                                 "labels": labels}, separators=(",", ":")) + "\n")
    return index_path


def load_training_set(
        features_manifest: str | Path) -> list[tuple[LayerStack, np.ndarray]]:
    """Read a features.jsonl index into (stack, multi-hot labels) pairs."""
    features_manifest = Path(features_manifest)
    dataset = []
    with open(features_manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                stack = LayerStack(read_lstk(features_manifest.parent / obj["path"]))
                labels = labels_to_multihot(
                    [InstrumentClass(name) for name in obj["labels"]])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ManifestError(f"{features_manifest}:{lineno}: {exc}") from exc
            dataset.append((stack, labels))
    if not dataset:
        raise ManifestError(f"{features_manifest}: no usable entries")
    return dataset
