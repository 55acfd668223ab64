"""WAV reading and writing.

Accepts RIFF/WAV with PCM 16-bit or IEEE float32 payloads, mono or stereo.
Stereo is downmixed by channel mean; everything can be resampled to the
canonical rate on load. Output is always float32 mono.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .corpus import AudioClip
from .errors import AudioFormatError

_INT_SCALES = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
    np.dtype(np.uint8): 128.0,
}


def read_wav(path: str | Path, target_sr: Optional[int] = None) -> AudioClip:
    """Read a WAV file as a mono float64 clip, optionally resampled."""
    try:
        sr, data = wavfile.read(str(path))
    except (ValueError, FileNotFoundError) as exc:
        raise AudioFormatError(f"cannot read {path}: {exc}") from None
    if data.ndim == 2:
        data = data.astype(np.float64).mean(axis=1)
    data = np.asarray(data)
    if data.dtype in _INT_SCALES:
        scale = _INT_SCALES[data.dtype]
        offset = scale if data.dtype == np.dtype(np.uint8) else 0.0
        data = (data.astype(np.float64) - offset) / scale
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported WAV sample format {data.dtype}")
    if not np.all(np.isfinite(data)):
        raise AudioFormatError(f"{path}: non-finite samples")
    clip = AudioClip(data, int(sr))
    if target_sr is not None and target_sr != clip.sample_rate:
        from .dsp import resample  # deferred: dsp imports nothing from here

        clip = resample(clip, target_sr)
    return clip


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as mono float32 WAV."""
    samples = np.asarray(clip.samples, dtype=np.float32)
    if not np.all(np.isfinite(samples)):
        raise AudioFormatError(f"refusing to write non-finite samples to {path}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), clip.sample_rate, samples)
