"""Run an encoder over every clip in a corpus manifest and write one
`<id>.lstk` embedding file per clip, plus a sidecar JSON documenting the
preprocessing choices for the run.

LSTK layout (little-endian): magic "LSTK", u32 version=1, u32 layer count,
u32 dimension, then L*D float32 values row-major. One pooled row per
encoder hidden layer.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .encoders import load_encoder

log = logging.getLogger("embed_export")

LSTK_MAGIC = b"LSTK"
LSTK_VERSION = 1
SIDECAR_NAME = "export_meta.json"


class ExportError(Exception):
    """Unusable manifest or job configuration."""


@dataclass(frozen=True)
class ExportJob:
    """One batch export: which clips, which encoder, where to.

    `sample_rate` is the rate clips are resampled to before the encoder;
    None means the encoder's own advertised rate. Pooling is mean over
    time per hidden layer, fixed.
    """

    manifest: Path
    encoder: str
    out_dir: Path
    sample_rate: Optional[int] = None
    pooling: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "manifest", Path(self.manifest))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.pooling != "mean":
            raise ExportError(f"unsupported pooling {self.pooling!r}; "
                              "only mean pooling is defined")
        if self.sample_rate is not None and self.sample_rate <= 0:
            raise ExportError(f"sample_rate must be positive, got {self.sample_rate}")


def _read_manifest(path: Path) -> list[tuple[str, Path]]:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                clip_id, rel = obj["id"], obj["path"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ExportError(f"{path}:{lineno}: {exc}") from exc
            if not clip_id or clip_id in seen:
                raise ExportError(f"{path}:{lineno}: missing or duplicate id")
            seen.add(clip_id)
            entries.append((clip_id, path.parent / rel))
    if not entries:
        raise ExportError(f"{path}: no clips listed")
    return entries


def _read_audio(path: Path, target_sr: int) -> np.ndarray:
    sr, data = wavfile.read(str(path))
    if data.ndim == 2:
        data = data.astype(np.float64).mean(axis=1)
    data = np.asarray(data)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    data = np.asarray(data, dtype=np.float64)
    if sr != target_sr:
        g = math.gcd(int(sr), int(target_sr))
        data = resample_poly(data, target_sr // g, sr // g)
    return data


def _write_lstk_atomic(path: Path, layers: np.ndarray) -> None:
    arr = np.ascontiguousarray(layers, dtype="<f4")
    blob = (LSTK_MAGIC
            + struct.pack("<III", LSTK_VERSION, arr.shape[0], arr.shape[1])
            + arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def export_embeddings(job: ExportJob) -> int:
    """Write one pooled-embedding file per readable clip; return the count.

    The encoder is loaded first so a bad identifier aborts before any file
    is touched. Unreadable clips are logged and skipped; every written
    header carries the encoder's (L, D), cross-checked against its config
    metadata.
    """
    encoder = load_encoder(job.encoder)
    info = encoder.info
    target_sr = job.sample_rate if job.sample_rate is not None else info.sample_rate

    entries = _read_manifest(job.manifest)
    job.out_dir.mkdir(parents=True, exist_ok=True)

    written = 0
    skipped: list[str] = []
    for clip_id, wav_path in entries:
        try:
            samples = _read_audio(wav_path, target_sr)
        except (OSError, ValueError) as exc:
            skipped.append(clip_id)
            log.warning("%s: unreadable (%s), skipped", clip_id, exc)
            continue
        states = np.asarray(encoder.hidden_states(samples), dtype=np.float64)
        if states.ndim != 3 or states.shape[0] != info.n_layers \
                or states.shape[2] != info.dim:
            raise ExportError(
                f"encoder {info.identifier!r} returned shape {states.shape}, "
                f"metadata says L={info.n_layers} D={info.dim}")
        pooled = states.mean(axis=1)  # [L x D]
        _write_lstk_atomic(job.out_dir / f"{clip_id}.lstk", pooled)
        written += 1

    sidecar = {
        "encoder": info.identifier,
        "n_layers": info.n_layers,
        "dim": info.dim,
        "sample_rate": target_sr,
        "pooling": "mean over time, per hidden layer",
        "preprocessing": {
            "channels": "stereo averaged to mono",
            "scaling": "integer PCM scaled to [-1, 1]; float passed through",
            "resampling": "polyphase (scipy.signal.resample_poly)",
            "normalization": "none",
            "padding": "zero-pad only inputs shorter than one encoder frame",
        },
        "written": written,
        "skipped": sorted(skipped),
    }
    tmp = job.out_dir / (SIDECAR_NAME + ".tmp")
    tmp.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    os.replace(tmp, job.out_dir / SIDECAR_NAME)

    log.info("%d embeddings (%d skipped) -> %s", written, len(skipped),
             job.out_dir)
    return written
