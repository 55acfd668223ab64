"""Tempo estimation and dynamic-programming beat selection.

Tempo comes from the autocorrelation of the onset envelope under a log-normal
plausibility prior centred at 120 BPM. Beats are then chosen to maximize the
sum of onset strength at the beats plus a regularity penalty
-tightness * ln(interval / period)^2 between consecutive beats, via the
classic backward-pointer dynamic program.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import OnsetEnvelope
from .errors import NoPeriodicityError

DEFAULT_TIGHTNESS = 100.0
MIN_ENVELOPE_SECONDS = 2.0


@dataclass(frozen=True)
class TempoPrior:
    """Log-normal tempo plausibility weighting over a hard BPM range."""

    center_bpm: float = 120.0
    spread: float = 1.0  # standard deviation in log2-BPM units
    min_bpm: float = 30.0
    max_bpm: float = 300.0

    def __post_init__(self):
        if not (0 < self.min_bpm < self.center_bpm < self.max_bpm):
            raise ValueError("need 0 < min_bpm < center_bpm < max_bpm")
        if self.spread <= 0:
            raise ValueError("spread must be positive")

    def weight(self, bpm) -> np.ndarray:
        z = np.log2(np.asarray(bpm, dtype=np.float64) / self.center_bpm) / self.spread
        return np.exp(-0.5 * z * z)


@dataclass(frozen=True)
class BeatAnalysis:
    bpm: float
    beat_times: np.ndarray  # seconds, strictly increasing
    score: float  # DP objective value
    beat_frames: np.ndarray = field(default=None, repr=False)


def estimate_tempo(env: OnsetEnvelope, prior: TempoPrior = TempoPrior()) -> float:
    """Global tempo in BPM from envelope autocorrelation.

    Candidates are the integer lags spanning the prior's BPM range; each is
    scored by the envelope autocovariance at that lag times the prior weight.
    The winning lag is refined by parabolic interpolation. Ties are broken
    toward the candidate nearer the prior centre by scanning candidates in
    order of increasing log-distance from it.
    """
    values = np.asarray(env.values, dtype=np.float64)
    fr = env.frame_rate
    if len(values) < MIN_ENVELOPE_SECONDS * fr:
        raise NoPeriodicityError(
            f"envelope too short for tempo estimation "
            f"({len(values) / fr:.2f} s < {MIN_ENVELOPE_SECONDS} s)")
    centered = values - values.mean()
    if not np.any(centered):
        raise NoPeriodicityError("no periodicity detected: flat envelope")
    n = len(centered)
    acf = np.correlate(centered, centered, mode="full")[n - 1:]

    lag_min = max(1, int(np.ceil(60.0 * fr / prior.max_bpm)))
    lag_max = min(n - 1, int(np.floor(60.0 * fr / prior.min_bpm)))
    if lag_max < lag_min:
        raise NoPeriodicityError("envelope shorter than one beat period")
    lags = np.arange(lag_min, lag_max + 1)
    bpms = 60.0 * fr / lags
    scores = acf[lags] * prior.weight(bpms)

    # Deterministic tie-break: candidates closer to the prior centre first,
    # kept only on strict improvement.
    order = np.argsort(np.abs(np.log2(bpms / prior.center_bpm)), kind="stable")
    best_i = order[0]
    for i in order[1:]:
        if scores[i] > scores[best_i]:
            best_i = i
    if scores[best_i] <= 0:
        raise NoPeriodicityError("no periodicity detected")

    lag = lags[best_i]
    refined = float(lag)
    if lag_min < lag < lag_max:
        s_prev, s_mid, s_next = (acf[lag - 1] * prior.weight(60.0 * fr / (lag - 1)),
                                 scores[best_i],
                                 acf[lag + 1] * prior.weight(60.0 * fr / (lag + 1)))
        denom = s_prev - 2.0 * s_mid + s_next
        if denom < 0:
            delta = 0.5 * (s_prev - s_next) / denom
            refined = lag + float(np.clip(delta, -0.5, 0.5))
    bpm = 60.0 * fr / refined
    return float(np.clip(bpm, prior.min_bpm, prior.max_bpm))


def _interval_bounds(period_frames: float) -> tuple[int, int]:
    """Allowed beat spacing in frames: [0.5, 2.0] times the beat period."""
    lo = max(1, int(np.ceil(0.5 * period_frames)))
    hi = max(lo, int(np.floor(2.0 * period_frames)))
    return lo, hi


def track_beats(env: OnsetEnvelope, bpm: float,
                tightness: float = DEFAULT_TIGHTNESS) -> BeatAnalysis:
    """Select beat frames by dynamic programming.

    The objective is sum(onset[b]) over chosen beats plus
    -tightness * ln(delta / tau)^2 for each consecutive interval delta, where
    tau is the beat period rounded to whole frames (so a perfectly regular
    grid scores zero penalty). Onset values are standardized by their standard
    deviation first, which makes the tightness trade-off scale-free. Intervals
    are restricted to [0.5, 2.0] times the (unrounded) period.
    """
    if not (30.0 <= bpm <= 300.0):
        raise ValueError(f"bpm {bpm} outside [30, 300]")
    if tightness <= 0:
        raise ValueError("tightness must be positive")
    values = np.asarray(env.values, dtype=np.float64)
    n = len(values)
    if n == 0:
        raise ValueError("empty envelope")

    std = values.std(ddof=1) if n > 1 else 0.0
    scores = values / std if std > 0 else values.copy()

    period = 60.0 * env.frame_rate / bpm
    tau = max(1, int(round(period)))
    d_lo, d_hi = _interval_bounds(period)

    log_tau = np.log(tau)
    cum = np.empty(n)
    pred = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best = 0.0  # starting a fresh chain at i costs nothing
        best_p = -1
        for delta in range(d_lo, min(d_hi, i) + 1):
            p = i - delta
            cand = cum[p] - tightness * (np.log(delta) - log_tau) ** 2
            if cand >= best:  # >= prefers linking, so regular chains survive ties
                best = cand
                best_p = p
        cum[i] = scores[i] + best
        pred[i] = best_p

    # Backtrack from the last maximal cumulative score (prefers longer chains
    # when the envelope is degenerate).
    end = n - 1 - int(np.argmax(cum[::-1]))
    chain = [end]
    while pred[chain[-1]] >= 0:
        chain.append(pred[chain[-1]])
    frames = np.array(chain[::-1], dtype=np.int64)

    return BeatAnalysis(
        bpm=float(bpm),
        beat_times=frames / env.frame_rate,
        score=float(cum[end]),
        beat_frames=frames,
    )
