"""Phase-vocoder time stretching and tempo matching.

Rate follows the speed convention: rate > 1 plays faster (shorter output,
higher BPM), output length is len(input)/rate within one hop. Tempo matching
computes the duration ratio source_bpm/target_bpm, refuses ratios outside
[0.7, 1.43] (larger stretches smear transients badly enough to poison
training data), and re-fixes the result to the canonical segment length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import AudioClip, SEGMENT_SECONDS
from .dsp import DEFAULT_N_FFT, istft, stft_complex
from .errors import PolymixError

RATE_MIN = 0.25
RATE_MAX = 4.0

# Tempo-match clamp on the duration ratio source_bpm / target_bpm.
TEMPO_RATIO_MIN = 0.7
TEMPO_RATIO_MAX = 1.43

BPM_MIN = 30.0
BPM_MAX = 300.0


@dataclass(frozen=True)
class StretchParams:
    rate: float  # > 1 shortens / speeds up
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_N_FFT // 4

    def __post_init__(self):
        if not (RATE_MIN <= self.rate <= RATE_MAX):
            raise PolymixError(
                f"stretch rate {self.rate} outside [{RATE_MIN}, {RATE_MAX}]")
        if not (0 < self.hop <= self.n_fft):
            raise ValueError("hop must satisfy 0 < hop <= n_fft")


def _phase_vocoder(spec: np.ndarray, rate: float, hop: int) -> np.ndarray:
    """Resample STFT columns in time while propagating phase.

    Analysis positions advance by ``rate`` columns per synthesis column;
    magnitudes are linearly interpolated between neighbouring columns and the
    measured phase advance (deviation from the bin's expected advance per hop)
    is accumulated, which preserves instantaneous frequency.
    """
    n_bins, n_frames = spec.shape
    cdtype = np.complex64 if spec.dtype == np.complex64 else np.complex128
    rdtype = np.float32 if cdtype == np.complex64 else np.float64
    steps = np.arange(0, n_frames, rate)
    # Expected phase advance per hop, pre-wrapped to (-pi, pi]. Only phase
    # modulo 2*pi ever reaches the output phasors, so wrapping every summand
    # first keeps the accumulated phase small enough for single precision.
    phi_advance = np.linspace(0, np.pi * hop, n_bins)
    phi_advance -= 2.0 * np.pi * np.rint(phi_advance / (2.0 * np.pi))
    phi_advance = phi_advance.astype(rdtype)
    padded = np.pad(spec, [(0, 0), (0, 2)])
    mags = np.abs(padded)
    angles = np.angle(padded)

    ks = steps.astype(np.intp)
    fracs = (steps - ks).astype(rdtype)
    out_mags = (1.0 - fracs) * mags[:, ks] + fracs * mags[:, ks + 1]
    # Measured advance between the two interpolation columns, wrapped to
    # (-pi, pi] around each bin's expected advance per hop.
    dphase = angles[:, ks + 1] - angles[:, ks] - phi_advance[:, np.newaxis]
    dphase -= 2.0 * np.pi * np.rint(dphase / (2.0 * np.pi))
    increments = phi_advance[:, np.newaxis] + dphase
    phases = np.empty_like(increments)
    phases[:, 0] = angles[:, 0]
    np.cumsum(increments[:, :-1], axis=1, out=phases[:, 1:])
    phases[:, 1:] += phases[:, [0]]
    out = np.empty(phases.shape, dtype=cdtype)
    out.real = out_mags * np.cos(phases)
    out.imag = out_mags * np.sin(phases)
    return out


def time_stretch(clip: AudioClip, params: StretchParams) -> AudioClip:
    """Change duration by 1/rate without changing pitch.

    Processing runs in float32 (audio precision); the phase accumulation
    inside the vocoder still happens in float64.
    """
    if len(clip) == 0:
        raise PolymixError("cannot stretch an empty clip")
    target_len = int(round(len(clip) / params.rate))
    samples = np.asarray(clip.samples, dtype=np.float32)
    spec = stft_complex(samples, params.n_fft, params.hop)
    stretched = _phase_vocoder(spec, params.rate, params.hop)
    out = istft(stretched, params.n_fft, params.hop, length=target_len)
    return AudioClip(out, clip.sample_rate)


def fix_length(clip: AudioClip, seconds: float = SEGMENT_SECONDS) -> AudioClip:
    """Trim or zero-pad to an exact duration."""
    n = int(round(seconds * clip.sample_rate))
    samples = np.asarray(clip.samples)
    if len(samples) >= n:
        samples = samples[:n]
    else:
        samples = np.pad(samples, (0, n - len(samples)))
    return AudioClip(samples, clip.sample_rate)


def match_tempo(clip: AudioClip, source_bpm: float, target_bpm: float,
                seg_seconds: float = SEGMENT_SECONDS) -> AudioClip:
    """Stretch a clip at ``source_bpm`` so it plays at ``target_bpm``, then
    re-fix it to the canonical segment length.

    The duration ratio source/target must stay inside the clamp; callers are
    expected to pick tempo-compatible clips (bin width keeps this true by
    construction in the synthesis pipeline).
    """
    for name, value in (("source_bpm", source_bpm), ("target_bpm", target_bpm)):
        if not (BPM_MIN <= value <= BPM_MAX):
            raise PolymixError(f"{name} {value} outside [{BPM_MIN}, {BPM_MAX}]")
    ratio = source_bpm / target_bpm  # output duration / input duration
    if not (TEMPO_RATIO_MIN <= ratio <= TEMPO_RATIO_MAX):
        raise PolymixError(
            f"tempo gap too large: duration ratio {ratio:.3f} outside "
            f"[{TEMPO_RATIO_MIN}, {TEMPO_RATIO_MAX}]")
    if abs(ratio - 1.0) < 1e-9:
        return fix_length(clip, seg_seconds)
    stretched = time_stretch(clip, StretchParams(rate=1.0 / ratio))
    return fix_length(stretched, seg_seconds)
