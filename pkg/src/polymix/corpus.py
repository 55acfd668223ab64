"""Monophonic corpus handling: instrument/mode vocabulary, silence trimming,
fixed-length segmentation, and the manifest-backed clip index.

The corpus is stored as a JSON Lines manifest, one object per clip:

    {"id": str, "instrument": str, "dastgah": str|null, "bpm": number|null,
     "path": str, "duration_s": number}

All audio is carried internally as mono float arrays at a known sample rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ManifestError

# Canonical internal format. Everything is downmixed and resampled to this on
# ingest; 22.05 kHz keeps the full musical range while halving compute vs CD rate.
CANONICAL_SAMPLE_RATE = 22050

# Fixed clip length for the corpus and all synthesized mixtures.
SEGMENT_SECONDS = 5.0

# Conventional silence-gate defaults, overridable from the CLI.
DEFAULT_SILENCE_THRESHOLD_DB = -40.0
DEFAULT_SILENCE_WINDOW_MS = 100.0

# Tempo bucket width used by the (instrument, dastgah, bpm_bin) index key.
DEFAULT_BPM_BIN_WIDTH = 8.0

BPM_MIN = 30.0
BPM_MAX = 300.0


class InstrumentClass(str, Enum):
    """The closed set of ten instrument labels (vocals count as one)."""

    NEY = "ney"
    TAR = "tar"
    SANTUR = "santur"
    KAMAN = "kaman"
    DAAF = "daaf"
    TONBAK = "tonbak"
    PIANO = "piano"
    VIOLIN = "violin"
    SITAR = "sitar"
    AVAZ = "avaz"

    @property
    def is_percussive(self) -> bool:
        return self in _PERCUSSIVE

    @classmethod
    def melodic(cls) -> tuple["InstrumentClass", ...]:
        return tuple(i for i in cls if not i.is_percussive)

    @classmethod
    def percussive(cls) -> tuple["InstrumentClass", ...]:
        return tuple(i for i in cls if i.is_percussive)


_PERCUSSIVE = frozenset({InstrumentClass.DAAF, InstrumentClass.TONBAK})

# Stable label order for multi-hot vectors: enum declaration order.
CLASS_ORDER: tuple[InstrumentClass, ...] = tuple(InstrumentClass)
N_CLASSES = len(CLASS_ORDER)


class Dastgah(str, Enum):
    """The seven canonical Persian modal systems."""

    CHAHARGAH = "chahargah"
    HOMAYOON = "homayoon"
    MAHUR = "mahur"
    NAVA = "nava"
    RAST_PANJGAH = "rast-panjgah"
    SEGAH = "segah"
    SHUR = "shur"


@dataclass(frozen=True)
class AudioClip:
    """Mono PCM samples at a known sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ClipRecord:
    """One manifest entry for a monophonic clip."""

    id: str
    instrument: InstrumentClass
    dastgah: Optional[Dastgah]
    bpm: Optional[float]
    path: str
    duration_s: float

    def validate(self) -> None:
        if self.instrument.is_percussive:
            if self.dastgah is not None:
                raise ManifestError(
                    f"clip {self.id!r}: percussive instrument "
                    f"{self.instrument.value!r} must not carry a dastgah"
                )
        elif self.dastgah is None:
            raise ManifestError(f"clip {self.id!r}: melodic clip missing dastgah")
        if self.bpm is not None and not (BPM_MIN <= self.bpm <= BPM_MAX):
            raise ManifestError(
                f"clip {self.id!r}: bpm {self.bpm} outside [{BPM_MIN}, {BPM_MAX}]"
            )
        if self.duration_s < 0:
            raise ManifestError(f"clip {self.id!r}: negative duration")

    def to_json(self) -> str:
        obj = {
            "id": self.id,
            "instrument": self.instrument.value,
            "dastgah": self.dastgah.value if self.dastgah else None,
            "bpm": self.bpm,
            "path": self.path,
            "duration_s": self.duration_s,
        }
        return json.dumps(obj, separators=(",", ":"))


def bpm_bin(bpm: float, bin_width: float = DEFAULT_BPM_BIN_WIDTH) -> int:
    return int(np.floor(bpm / bin_width))


class CorpusIndex:
    """Immutable lookup over clip records, keyed by instrument, dastgah and
    tempo bucket. Records are sorted by id before construction so the index is
    independent of ingestion order.
    """

    def __init__(self, records: Iterable[ClipRecord],
                 bpm_bin_width: float = DEFAULT_BPM_BIN_WIDTH,
                 base_dir: Optional[Path] = None):
        self.records: list[ClipRecord] = sorted(records, key=lambda r: r.id)
        self.bpm_bin_width = float(bpm_bin_width)
        self.base_dir = base_dir
        self._by_id: dict[str, ClipRecord] = {}
        self._by_instrument: dict[InstrumentClass, list[ClipRecord]] = {}
        self._by_inst_dastgah: dict[tuple, list[ClipRecord]] = {}
        self._by_inst_bin: dict[tuple, list[ClipRecord]] = {}
        self._by_inst_dastgah_bin: dict[tuple, list[ClipRecord]] = {}
        for rec in self.records:
            if rec.id in self._by_id:
                raise ManifestError(f"duplicate clip id {rec.id!r}")
            rec.validate()
            self._by_id[rec.id] = rec
            self._by_instrument.setdefault(rec.instrument, []).append(rec)
            if rec.dastgah is not None:
                self._by_inst_dastgah.setdefault(
                    (rec.instrument, rec.dastgah), []).append(rec)
            if rec.bpm is not None:
                b = bpm_bin(rec.bpm, self.bpm_bin_width)
                self._by_inst_bin.setdefault((rec.instrument, b), []).append(rec)
                if rec.dastgah is not None:
                    self._by_inst_dastgah_bin.setdefault(
                        (rec.instrument, rec.dastgah, b), []).append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, clip_id: str) -> ClipRecord:
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise ManifestError(f"unknown clip id {clip_id!r}") from None

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._by_id

    def clips(self, instrument: InstrumentClass,
              dastgah: Optional[Dastgah] = None,
              bin_index: Optional[int] = None) -> list[ClipRecord]:
        """Records matching the key triple; None means unconstrained."""
        if dastgah is None and bin_index is None:
            out = self._by_instrument.get(instrument, [])
        elif bin_index is None:
            out = self._by_inst_dastgah.get((instrument, dastgah), [])
        elif dastgah is None:
            out = self._by_inst_bin.get((instrument, bin_index), [])
        else:
            out = self._by_inst_dastgah_bin.get((instrument, dastgah, bin_index), [])
        return out

    def dastgahs_covering(self, instruments: Sequence[InstrumentClass]) -> list[Dastgah]:
        """Dastgahs for which every listed (melodic) instrument has a clip."""
        out = []
        for d in Dastgah:
            if all(self.clips(i, dastgah=d) for i in instruments):
                out.append(d)
        return out

    def bins_covering(self, instruments: Sequence[InstrumentClass],
                      dastgah: Optional[Dastgah] = None,
                      melodic_only_dastgah: bool = True) -> list[int]:
        """Tempo buckets in which every listed instrument has a clip.

        When ``dastgah`` is given, melodic instruments are additionally
        constrained to that dastgah; percussive ones never are.
        """
        candidate_bins: Optional[set[int]] = None
        for inst in instruments:
            if dastgah is not None and not (melodic_only_dastgah and inst.is_percussive):
                pool = self.clips(inst, dastgah=dastgah)
            else:
                pool = self.clips(inst)
            bins = {bpm_bin(r.bpm, self.bpm_bin_width) for r in pool if r.bpm is not None}
            candidate_bins = bins if candidate_bins is None else candidate_bins & bins
            if not candidate_bins:
                return []
        return sorted(candidate_bins or [])

    def summary(self) -> dict:
        """Per-class and per-(class, dastgah) clip counts."""
        per_class: dict[str, int] = {c.value: 0 for c in InstrumentClass}
        per_cell: dict[str, dict[str, int]] = {}
        for rec in self.records:
            per_class[rec.instrument.value] += 1
            if rec.dastgah is not None:
                cell = per_cell.setdefault(rec.instrument.value, {})
                cell[rec.dastgah.value] = cell.get(rec.dastgah.value, 0) + 1
        return {
            "total": len(self.records),
            "per_class": per_class,
            "per_class_dastgah": per_cell,
        }

    def resolve_path(self, rec: ClipRecord) -> Path:
        p = Path(rec.path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


def parse_record(obj: dict, where: str = "") -> ClipRecord:
    prefix = f"{where}: " if where else ""
    try:
        instrument = InstrumentClass(obj["instrument"])
    except (KeyError, ValueError):
        raise ManifestError(f"{prefix}unknown or missing instrument "
                            f"{obj.get('instrument')!r}") from None
    raw_dastgah = obj.get("dastgah")
    if raw_dastgah is None:
        dastgah = None
    else:
        try:
            dastgah = Dastgah(raw_dastgah)
        except ValueError:
            raise ManifestError(f"{prefix}unknown dastgah {raw_dastgah!r}") from None
    bpm = obj.get("bpm")
    rec = ClipRecord(
        id=str(obj.get("id", "")),
        instrument=instrument,
        dastgah=dastgah,
        bpm=float(bpm) if bpm is not None else None,
        path=str(obj.get("path", "")),
        duration_s=float(obj.get("duration_s", 0.0)),
    )
    if not rec.id:
        raise ManifestError(f"{prefix}missing clip id")
    try:
        rec.validate()
    except ManifestError as exc:
        raise ManifestError(f"{prefix}{exc}") from None
    return rec


def load_manifest(path: str | Path,
                  bpm_bin_width: float = DEFAULT_BPM_BIN_WIDTH) -> CorpusIndex:
    """Load a JSONL manifest into a CorpusIndex.

    Raises ManifestError naming the offending line for malformed JSON, unknown
    labels, invariant violations, or duplicate ids.
    """
    path = Path(path)
    records = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed line: {exc}") from None
            rec = parse_record(obj, where=f"{path}:{lineno}")
            if rec.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate clip id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return CorpusIndex(records, bpm_bin_width=bpm_bin_width, base_dir=path.parent)


def write_manifest(records: Iterable[ClipRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def trim_silence(clip: AudioClip,
                 threshold_db: float = DEFAULT_SILENCE_THRESHOLD_DB,
                 window_ms: float = DEFAULT_SILENCE_WINDOW_MS) -> AudioClip:
    """Drop every analysis window whose RMS falls below ``threshold_db`` dBFS.

    The clip is cut into non-overlapping windows of ``window_ms``; windows at or
    above the gate are concatenated in order. A trailing partial window is
    always discarded, so even a fully loud clip is rounded down to whole
    windows. An entirely silent clip yields an empty clip.
    """
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative (dB relative to full scale)")
    if window_ms <= 0:
        raise ValueError("window_ms must be positive")
    win = max(1, int(round(window_ms / 1000.0 * clip.sample_rate)))
    n_win = len(clip.samples) // win
    if n_win == 0:
        return AudioClip(np.zeros(0, dtype=clip.samples.dtype), clip.sample_rate)
    frames = clip.samples[: n_win * win].reshape(n_win, win)
    rms = np.sqrt(np.mean(frames.astype(np.float64) ** 2, axis=1))
    with np.errstate(divide="ignore"):
        level_db = 20.0 * np.log10(rms)
    keep = level_db >= threshold_db
    out = frames[keep].reshape(-1)
    return AudioClip(out.astype(clip.samples.dtype, copy=False), clip.sample_rate)


def segment(clip: AudioClip, seg_seconds: float = SEGMENT_SECONDS) -> list[AudioClip]:
    """Cut a clip into contiguous non-overlapping segments of ``seg_seconds``.

    The trailing remainder is discarded; a clip shorter than one segment yields
    an empty list.
    """
    if seg_seconds <= 0:
        raise ValueError("seg_seconds must be positive")
    seg = int(round(seg_seconds * clip.sample_rate))
    n = len(clip.samples) // seg
    return [
        AudioClip(clip.samples[i * seg:(i + 1) * seg].copy(), clip.sample_rate)
        for i in range(n)
    ]


def labels_to_multihot(labels: Sequence[InstrumentClass]) -> np.ndarray:
    vec = np.zeros(N_CLASSES, dtype=np.int8)
    for lab in labels:
        vec[CLASS_ORDER.index(lab)] = 1
    return vec
