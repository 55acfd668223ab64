"""Spectral front end: resampling, STFT, mel projection, onset strength.

The onset strength envelope drives both tempo estimation and beat selection:
it is the band-averaged, half-wave-rectified frame difference of the
log-compressed mel spectrogram, locally mean-subtracted so sustained energy
does not read as onsets.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from typing import Optional

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter1d
from scipy.signal import get_window, resample_poly

from .corpus import AudioClip
from .errors import PolymixError

DEFAULT_N_FFT = 2048
DEFAULT_HOP = 512
DEFAULT_N_MELS = 128
DEFAULT_LOG_GAIN = 1.0
# Width of the moving-average window used to centre the onset envelope.
ENVELOPE_CENTER_SECONDS = 0.37


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude spectrogram with its analysis parameters."""

    magnitudes: np.ndarray  # [n_bins x n_frames], non-negative
    n_fft: int
    hop_length: int
    sample_rate: int

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_length

    @property
    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.n_fft


@dataclass(frozen=True)
class OnsetEnvelope:
    """Per-frame onset strength; values are non-negative by construction."""

    values: np.ndarray
    frame_rate: float

    def __len__(self) -> int:
        return len(self.values)

    @property
    def duration_seconds(self) -> float:
        return len(self.values) / self.frame_rate


def resample(clip: AudioClip, target_sr: int) -> AudioClip:
    """Band-limited polyphase resampling.

    Identity rates return the clip unchanged. The anti-aliasing filter is a
    Kaiser-windowed sinc with at least 20 taps per side (scipy's polyphase
    default), comfortably inside the band-limiting contract.
    """
    if target_sr <= 0:
        raise ValueError("target_sr must be positive")
    if target_sr == clip.sample_rate:
        return clip
    g = gcd(clip.sample_rate, target_sr)
    up, down = target_sr // g, clip.sample_rate // g
    out = resample_poly(np.asarray(clip.samples, dtype=np.float64), up, down)
    return AudioClip(out, target_sr)


def _frame(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centre-pad (reflect) and slice into overlapping frames, one per hop.

    Yields 1 + len(samples)//hop frames of length n_fft as a strided view
    (callers multiply by a window, which materializes a fresh array).
    """
    pad = n_fft // 2
    padded = np.pad(samples, pad, mode="reflect")
    n_frames = 1 + len(samples) // hop
    return sliding_window_view(padded, n_fft)[:n_frames * hop:hop]


def stft_complex(samples: np.ndarray, n_fft: int = DEFAULT_N_FFT,
                 hop: int = DEFAULT_HOP) -> np.ndarray:
    """Complex STFT [n_bins x n_frames] with a periodic Hann window.

    Shared by the magnitude front end and the phase-vocoder stretcher.
    """
    if len(samples) == 0:
        raise PolymixError("cannot compute STFT of an empty clip")
    if n_fft < 256 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError("n_fft must be a power of two >= 256")
    if not (0 < hop <= n_fft):
        raise ValueError("hop must satisfy 0 < hop <= n_fft")
    # float32 input stays float32 end to end (the stretcher's fast path);
    # everything else is promoted to float64.
    samples = np.asarray(samples)
    dtype = np.float32 if samples.dtype == np.float32 else np.float64
    window = get_window("hann", n_fft, fftbins=True).astype(dtype)
    frames = _frame(samples.astype(dtype, copy=False), n_fft, hop)
    # scipy.fft keeps float32 in true single precision; numpy.fft upcasts.
    return scipy.fft.rfft(frames * window, axis=1).T


def istft(spec: np.ndarray, n_fft: int, hop: int,
          length: Optional[int] = None) -> np.ndarray:
    """Invert a complex STFT by windowed overlap-add.

    Assumes the analysis layout of :func:`stft_complex` (centre padding,
    periodic Hann). The squared-window sum is divided out; ``length`` trims or
    zero-pads the result to an exact sample count.
    """
    rdtype = np.float32 if spec.dtype == np.complex64 else np.float64
    window = get_window("hann", n_fft, fftbins=True).astype(rdtype)
    frames = scipy.fft.irfft(spec.T, n=n_fft, axis=1) * window
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total, dtype=rdtype)
    wsum = np.zeros(total, dtype=rdtype)
    w2 = window ** 2
    for t in range(n_frames):
        out[t * hop:t * hop + n_fft] += frames[t]
        wsum[t * hop:t * hop + n_fft] += w2
    nonzero = wsum > 1e-10
    out[nonzero] /= wsum[nonzero]
    pad = n_fft // 2
    out = out[pad:total - pad]
    if length is not None:
        if len(out) >= length:
            out = out[:length]
        else:
            out = np.pad(out, (0, length - len(out)))
    return out


def stft(clip: AudioClip, n_fft: int = DEFAULT_N_FFT,
         hop: int = DEFAULT_HOP) -> Spectrogram:
    """Magnitude spectrogram; n_frames = 1 + floor(len/hop)."""
    mags = np.abs(stft_complex(clip.samples, n_fft, hop))
    return Spectrogram(mags, n_fft, hop, clip.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filterbank [n_mels x n_bins], area-normalized.

    Each triangle is scaled by 2 / (its base width in Hz) so every band
    integrates the same amount of flat spectrum.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not (0 <= fmin < fmax <= sample_rate / 2):
        raise ValueError("need 0 <= fmin < fmax <= sample_rate/2")
    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - freqs) / max(hi - mid, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        fb[m] *= 2.0 / max(hi - lo, 1e-12)
    return fb


def mel_spectrogram(spec: Spectrogram, n_mels: int = DEFAULT_N_MELS,
                    fmin: float = 0.0, fmax: Optional[float] = None) -> np.ndarray:
    """Project magnitudes onto the mel filterbank -> [n_mels x n_frames]."""
    if fmax is None:
        fmax = spec.sample_rate / 2
    fb = mel_filterbank(spec.sample_rate, spec.n_fft, n_mels, fmin, fmax)
    return fb @ spec.magnitudes


def onset_envelope(mel: np.ndarray, frame_rate: float,
                   log_compress: bool = True,
                   gain: float = DEFAULT_LOG_GAIN,
                   center_seconds: float = ENVELOPE_CENTER_SECONDS) -> OnsetEnvelope:
    """Onset strength from a mel spectrogram.

    Per frame: band-mean of the half-wave-rectified first difference of
    ln(1 + gain * mel); frame 0 carries no history so it is zero. The result
    is then centred by subtracting a local moving average and clipped at zero,
    which suppresses slow loudness drift.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if np.any(mel < 0):
        raise ValueError("mel spectrogram must be non-negative")
    compressed = np.log1p(gain * mel) if log_compress else mel
    flux = np.maximum(0.0, np.diff(compressed, axis=1)).mean(axis=0)
    env = np.concatenate([[0.0], flux])
    size = int(round(center_seconds * frame_rate))
    if size % 2 == 0:
        size += 1
    if size > 1 and len(env) > 1:
        local_mean = uniform_filter1d(env, size=size, mode="nearest")
        env = np.maximum(0.0, env - local_mean)
    return OnsetEnvelope(env, frame_rate)


def onset_envelope_from_clip(clip: AudioClip,
                             n_fft: int = DEFAULT_N_FFT,
                             hop: int = DEFAULT_HOP,
                             n_mels: int = DEFAULT_N_MELS) -> OnsetEnvelope:
    """Convenience chain clip -> STFT -> mel -> onset envelope."""
    spec = stft(clip, n_fft=n_fft, hop=hop)
    mel = mel_spectrogram(spec, n_mels=n_mels)
    return onset_envelope(mel, spec.frame_rate)
