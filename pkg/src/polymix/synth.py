"""Polyphonic mixture synthesis.

Ensembles are sampled under one of five priors, clips are selected under the
active strategy's constraints (shared dastgah and/or shared tempo bucket),
tempo-aligned to a baseline, and mixed into labeled 5-second samples.

Determinism contract: each sample owns an RNG stream derived from
(master_seed, sample_index) through a splitmix-style 64-bit mix (see
``child_seed``), so serial and parallel runs are byte-identical.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import audio_io
from .corpus import (
    AudioClip,
    CANONICAL_SAMPLE_RATE,
    CLASS_ORDER,
    ClipRecord,
    CorpusIndex,
    Dastgah,
    DEFAULT_BPM_BIN_WIDTH,
    InstrumentClass,
    SEGMENT_SECONDS,
    bpm_bin,
    labels_to_multihot,
)
from .errors import InfeasibleCombinationError, PolymixError, RetrySignal
from .stretch import fix_length, match_tempo

MIX_PEAK = 0.9
GAIN_LOW = 0.6
GAIN_HIGH = 1.0
MAX_SELECT_RETRIES = 20

# Slack for float32 quantization of the 0.9 peak target when validating audio.
PEAK_TOLERANCE = 1e-6


class Strategy(Enum):
    """Clip-selection constraint sets, one per reported configuration."""

    RANDOM = "random"
    BPM_ONLY = "bpm"
    DASTGAH_ONLY = "dastgah"
    DASTGAH_BPM = "dastgah-bpm"

    @property
    def needs_dastgah(self) -> bool:
        return self in (Strategy.DASTGAH_ONLY, Strategy.DASTGAH_BPM)

    @property
    def needs_bpm(self) -> bool:
        return self in (Strategy.BPM_ONLY, Strategy.DASTGAH_BPM)


class EnsemblePrior(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    ORCHESTRAL = "orchestral"
    VOCAL = "vocal"
    RANDOM_COMBO = "random-combo"


ALL_PRIORS: tuple[EnsemblePrior, ...] = tuple(EnsemblePrior)

_MELODIC = sorted(InstrumentClass.melodic(), key=lambda i: i.value)
_PERCUSSIVE = sorted(InstrumentClass.percussive(), key=lambda i: i.value)
_NON_VOCAL_MELODIC = [i for i in _MELODIC if i is not InstrumentClass.AVAZ]
_ALL = sorted(InstrumentClass, key=lambda i: i.value)


@dataclass(frozen=True)
class MixtureSample:
    """One synthesized polyphonic clip with its provenance."""

    id: str
    audio: AudioClip
    labels: np.ndarray  # multi-hot over CLASS_ORDER
    strategy: Strategy
    prior: EnsemblePrior
    dastgah: Optional[Dastgah]
    baseline_bpm: Optional[float]
    source_ids: tuple[str, ...]
    seed: int

    def manifest_line(self, path: str) -> str:
        labels = [c.value for c, on in zip(CLASS_ORDER, self.labels) if on]
        obj = {
            "id": self.id,
            "path": path,
            "labels": labels,
            "strategy": self.strategy.value,
            "prior": self.prior.value,
            "dastgah": self.dastgah.value if self.dastgah else None,
            "baseline_bpm": self.baseline_bpm,
            "source_ids": list(self.source_ids),
            "seed": self.seed,
        }
        return json.dumps(obj, separators=(",", ":"))


@dataclass
class SynthConfig:
    total_samples: int
    strategy: Strategy
    output_dir: Path
    master_seed: int = 0
    bpm_bin_width: float = DEFAULT_BPM_BIN_WIDTH
    gain_low: float = GAIN_LOW
    gain_high: float = GAIN_HIGH
    peak: float = MIX_PEAK
    tempo_match_percussion: bool = True
    max_retries: int = MAX_SELECT_RETRIES
    threads: int = 1
    write_audio: bool = True

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        if self.total_samples <= 0 or self.total_samples % len(ALL_PRIORS) != 0:
            raise PolymixError(
                f"total_samples must be a positive multiple of {len(ALL_PRIORS)} "
                f"(equal prior partitions), got {self.total_samples}")
        if not (0 < self.gain_low <= self.gain_high):
            raise PolymixError("need 0 < gain_low <= gain_high")


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def child_seed(master_seed: int, index: int) -> int:
    """Per-sample seed: splitmix64 finalizer applied to master + (i+1)*golden.

    Stated explicitly so ports in other languages can reproduce the exact
    sample streams.
    """
    z = (master_seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def prior_for_index(index: int, total: int) -> EnsemblePrior:
    """Contiguous equal blocks of sample indices, one block per prior."""
    block = total // len(ALL_PRIORS)
    return ALL_PRIORS[min(index // block, len(ALL_PRIORS) - 1)]


def _choose(rng: np.random.Generator, pool: Sequence, k: int) -> list:
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in sorted(idx)]


def sample_ensemble(prior: EnsemblePrior,
                    rng: np.random.Generator) -> tuple[InstrumentClass, ...]:
    """Draw an instrument combination (no repeats) under a prior.

    Draw order is fixed per prior: ensemble size first, then melodic picks,
    then the percussion coin / count, then percussion picks.
    """
    if prior is EnsemblePrior.SMALL:
        combo = _choose(rng, _MELODIC, 2)
        if rng.random() < 0.5:
            combo += _choose(rng, _PERCUSSIVE, 1)
    elif prior is EnsemblePrior.MEDIUM:
        size = int(rng.integers(3, 5))
        combo = _choose(rng, _MELODIC, size)
        if rng.random() < 0.7:
            combo += _choose(rng, _PERCUSSIVE, 1)
    elif prior is EnsemblePrior.ORCHESTRAL:
        size = int(rng.integers(5, 8))
        combo = _choose(rng, _MELODIC, size)
        n_perc = int(rng.integers(1, 3))
        combo += _choose(rng, _PERCUSSIVE, n_perc)
    elif prior is EnsemblePrior.VOCAL:
        size = int(rng.integers(2, 5))
        combo = [InstrumentClass.AVAZ] + _choose(rng, _NON_VOCAL_MELODIC, size)
        if rng.random() < 0.5:
            combo += _choose(rng, _PERCUSSIVE, 1)
    elif prior is EnsemblePrior.RANDOM_COMBO:
        size = int(rng.integers(2, 7))
        combo = _choose(rng, _ALL, size)
    else:  # pragma: no cover
        raise ValueError(f"unknown prior {prior}")
    return tuple(sorted(combo, key=lambda i: i.value))


@dataclass(frozen=True)
class Selection:
    clips: tuple[ClipRecord, ...]
    dastgah: Optional[Dastgah]
    baseline_bpm: Optional[float]


def _pick(rng: np.random.Generator, pool: list[ClipRecord]) -> ClipRecord:
    return pool[int(rng.integers(len(pool)))]


def select_clips(index: CorpusIndex, combo: Sequence[InstrumentClass],
                 strategy: Strategy, rng: np.random.Generator) -> Selection:
    """Pick one clip per combo instrument under the strategy's constraints.

    Dastgah strategies draw the dastgah uniformly from those covering every
    melodic instrument in the combo; BPM strategies restrict all clips to one
    tempo bucket and designate the median of the selected clips' BPM values as
    the baseline. Percussion is never dastgah-constrained. Raises RetrySignal
    when no dastgah/bucket can satisfy the combo.
    """
    if len(index) == 0:
        raise PolymixError("empty corpus index")
    melodic = [i for i in combo if not i.is_percussive]

    dastgah: Optional[Dastgah] = None
    bin_index: Optional[int] = None

    if strategy is Strategy.DASTGAH_ONLY:
        candidates = index.dastgahs_covering(melodic)
        if not candidates:
            raise RetrySignal(f"no dastgah covers {_combo_names(melodic)}")
        dastgah = candidates[int(rng.integers(len(candidates)))]
    elif strategy is Strategy.BPM_ONLY:
        bins = index.bins_covering(combo)
        if not bins:
            raise RetrySignal(f"no shared tempo bucket for {_combo_names(combo)}")
        bin_index = bins[int(rng.integers(len(bins)))]
    elif strategy is Strategy.DASTGAH_BPM:
        feasible = [d for d in index.dastgahs_covering(melodic)
                    if index.bins_covering(combo, dastgah=d)]
        if not feasible:
            raise RetrySignal(
                f"no dastgah with a shared tempo bucket for {_combo_names(combo)}")
        dastgah = feasible[int(rng.integers(len(feasible)))]
        bins = index.bins_covering(combo, dastgah=dastgah)
        bin_index = bins[int(rng.integers(len(bins)))]

    picked = []
    for inst in combo:  # combo is sorted, so draw order is reproducible
        use_dastgah = dastgah if (dastgah is not None and not inst.is_percussive) else None
        pool = index.clips(inst, dastgah=use_dastgah, bin_index=bin_index)
        if not pool:
            raise RetrySignal(f"no clip for {inst.value} under "
                              f"(dastgah={use_dastgah}, bin={bin_index})")
        picked.append(_pick(rng, pool))

    baseline = None
    if strategy.needs_bpm:
        baseline = float(np.median([r.bpm for r in picked]))
    return Selection(tuple(picked), dastgah, baseline)


def _combo_names(combo) -> str:
    return "{" + ", ".join(i.value for i in combo) + "}"


def _peak_normalize(samples: np.ndarray, peak: float) -> np.ndarray:
    m = np.max(np.abs(samples)) if len(samples) else 0.0
    if m == 0:
        return samples
    return samples * (peak / m)


def mix(clips: Sequence[AudioClip], rng: np.random.Generator,
        gain_low: float = GAIN_LOW, gain_high: float = GAIN_HIGH,
        peak: float = MIX_PEAK) -> AudioClip:
    """Sum stems with per-stem random gains, peak-normalized to ``peak``.

    Each stem is first peak-normalized, scaled by a gain drawn uniformly from
    [gain_low, gain_high], summed, and the sum is peak-normalized again, so no
    output sample can exceed the target peak.
    """
    if len(clips) < 2:
        raise PolymixError("mix needs at least 2 clips")
    n = len(clips[0].samples)
    sr = clips[0].sample_rate
    for c in clips[1:]:
        if len(c.samples) != n or c.sample_rate != sr:
            raise PolymixError("mix requires equal-length clips at one sample rate")
    gains = rng.uniform(gain_low, gain_high, size=len(clips))
    total = np.zeros(n, dtype=np.float64)
    for c, g in zip(clips, gains):
        total += _peak_normalize(np.asarray(c.samples, dtype=np.float64), peak) * g
    return AudioClip(_peak_normalize(total, peak), sr)


def _load_stem(index: CorpusIndex, rec: ClipRecord,
               baseline_bpm: Optional[float],
               tempo_match_percussion: bool,
               cache: Optional[dict] = None) -> AudioClip:
    if cache is not None and rec.id in cache:
        clip = cache[rec.id]
    else:
        clip = audio_io.read_wav(index.resolve_path(rec),
                                 target_sr=CANONICAL_SAMPLE_RATE)
        if cache is not None:
            cache[rec.id] = clip
    if baseline_bpm is not None and rec.bpm is not None and (
            tempo_match_percussion or not rec.instrument.is_percussive):
        return match_tempo(clip, rec.bpm, baseline_bpm)
    return fix_length(clip)


def build_sample(index: CorpusIndex, config: SynthConfig,
                 sample_index: int,
                 cache: Optional[dict] = None) -> MixtureSample:
    """Generate one mixture from its (master_seed, index) RNG stream.

    Retries the ensemble draw up to ``config.max_retries`` times when the
    corpus cannot satisfy it, then gives up naming the blocking constraint.
    """
    prior = prior_for_index(sample_index, config.total_samples)
    seed = child_seed(config.master_seed, sample_index)
    rng = np.random.Generator(np.random.PCG64(seed))

    last_reason = ""
    for _ in range(config.max_retries):
        combo = sample_ensemble(prior, rng)
        try:
            selection = select_clips(index, combo, config.strategy, rng)
            break
        except RetrySignal as sig:
            last_reason = str(sig)
    else:
        raise InfeasibleCombinationError(
            f"sample {sample_index} ({prior.value}/{config.strategy.value}): "
            f"no satisfiable combination in {config.max_retries} draws; "
            f"last failure: {last_reason}")

    stems = [
        _load_stem(index, rec, selection.baseline_bpm,
                   config.tempo_match_percussion, cache)
        for rec in selection.clips
    ]
    audio = mix(stems, rng, config.gain_low, config.gain_high, config.peak)
    labels = labels_to_multihot([r.instrument for r in selection.clips])
    return MixtureSample(
        id=f"mix-{sample_index:06d}",
        audio=audio,
        labels=labels,
        strategy=config.strategy,
        prior=prior,
        dastgah=selection.dastgah,
        baseline_bpm=selection.baseline_bpm,
        source_ids=tuple(r.id for r in selection.clips),
        seed=seed,
    )


def synthesize_dataset(index: CorpusIndex, config: SynthConfig) -> Path:
    """Emit ``config.total_samples`` mixtures plus a JSONL manifest.

    Samples are generated independently (optionally across threads) and the
    manifest is written serialized in index order, so the output is a pure
    function of (index, config).
    """
    out_dir = config.output_dir
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"

    # Source clips are read once and shared across samples; worth ~80 MB for
    # a full corpus and removes most disk traffic. Entries are immutable so
    # sharing across worker threads cannot change any output.
    cache: dict = {}
    indices = range(config.total_samples)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            samples = list(pool.map(
                lambda i: build_sample(index, config, i, cache), indices))
    else:
        samples = [build_sample(index, config, i, cache) for i in indices]

    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        for sample in samples:
            rel = f"audio/{sample.id}.wav"
            if config.write_audio:
                audio_io.write_wav(out_dir / rel, sample.audio)
            fh.write(sample.manifest_line(rel) + "\n")
    return manifest_path


@dataclass(frozen=True)
class Violation:
    sample_id: str
    kind: str
    detail: str


def validate_output(mixture_manifest: str | Path, index: CorpusIndex,
                    bpm_bin_width: Optional[float] = None,
                    check_audio: bool = True) -> list[Violation]:
    """Re-check every synthesis invariant from the output manifest alone.

    Checks per sample: labels decode exactly to the source clips' instruments,
    at least two distinct instruments, dastgah consistency for dastgah
    strategies, a single tempo bucket for BPM strategies, and (optionally)
    that audio is exactly segment-length at the canonical rate with peak
    <= 0.9 plus float32 slack.
    """
    mixture_manifest = Path(mixture_manifest)
    width = bpm_bin_width if bpm_bin_width is not None else index.bpm_bin_width
    violations: list[Violation] = []

    def bad(sid: str, kind: str, detail: str):
        violations.append(Violation(sid, kind, detail))

    with open(mixture_manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            sid = obj.get("id", f"line-{lineno}")
            try:
                strategy = Strategy(obj["strategy"])
                sources = [index.get(cid) for cid in obj["source_ids"]]
            except (KeyError, ValueError, PolymixError) as exc:
                bad(sid, "manifest", str(exc))
                continue

            expected = sorted({r.instrument.value for r in sources})
            if sorted(obj.get("labels", [])) != expected:
                bad(sid, "label-soundness",
                    f"labels {obj.get('labels')} != sources {expected}")
            if len(expected) < 2:
                bad(sid, "label-soundness", "fewer than 2 distinct instruments")

            if strategy.needs_dastgah:
                declared = obj.get("dastgah")
                if declared is None:
                    bad(sid, "dastgah-consistency", "strategy requires a dastgah")
                else:
                    for r in sources:
                        if not r.instrument.is_percussive and (
                                r.dastgah is None or r.dastgah.value != declared):
                            bad(sid, "dastgah-consistency",
                                f"{r.id} is {r.dastgah and r.dastgah.value}, "
                                f"sample says {declared}")

            if strategy.needs_bpm:
                bpms = [r.bpm for r in sources]
                if any(b is None for b in bpms):
                    bad(sid, "bpm-bin", "source clip without bpm under a BPM strategy")
                else:
                    bins = {bpm_bin(b, width) for b in bpms}
                    if len(bins) != 1:
                        bad(sid, "bpm-bin", f"sources span buckets {sorted(bins)}")
                    if obj.get("baseline_bpm") is None:
                        bad(sid, "bpm-bin", "missing baseline_bpm")

            if check_audio:
                wav_path = mixture_manifest.parent / obj["path"]
                try:
                    clip = audio_io.read_wav(wav_path)
                except PolymixError as exc:
                    bad(sid, "audio", str(exc))
                    continue
                if clip.sample_rate != CANONICAL_SAMPLE_RATE:
                    bad(sid, "audio", f"sample rate {clip.sample_rate}")
                expected_len = int(round(SEGMENT_SECONDS * CANONICAL_SAMPLE_RATE))
                if len(clip) != expected_len:
                    bad(sid, "audio", f"length {len(clip)} != {expected_len}")
                peak = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
                if peak > MIX_PEAK + PEAK_TOLERANCE:
                    bad(sid, "clipping", f"peak {peak:.8f} exceeds {MIX_PEAK}")
    return violations
