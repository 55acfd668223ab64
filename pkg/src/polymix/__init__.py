"""Culturally constrained polyphonic mixture synthesis and multi-label
instrument classification for Persian classical music corpora.

Subpackages by pipeline stage:

- corpus: clip records, manifests, silence trimming, segmentation
- dsp: resampling, STFT, mel spectrograms, onset envelopes
- beat: tempo estimation and beat tracking
- stretch: phase-vocoder time stretching and tempo matching
- synth: ensemble sampling, constrained clip selection, mixing
- features: desk-scale pseudo-encoder producing embedding stacks
- model: layer-weighted classifier head, training, binary formats
- metrics: multi-label accuracy, ROC-AUC, F1, threshold sweeps
- report: figure rendering for evaluation artifacts
- cli: operator commands tying the stages together
"""

from .corpus import (
    AudioClip,
    CANONICAL_SAMPLE_RATE,
    CLASS_ORDER,
    ClipRecord,
    CorpusIndex,
    Dastgah,
    InstrumentClass,
    N_CLASSES,
    SEGMENT_SECONDS,
    load_manifest,
)
from .errors import (
    AudioFormatError,
    InfeasibleCombinationError,
    ManifestError,
    NoPeriodicityError,
    PolymixError,
)
from .model import HeadModel, LayerStack, TrainConfig, read_lstk, write_lstk
from .synth import EnsemblePrior, Strategy, SynthConfig

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "AudioFormatError",
    "CANONICAL_SAMPLE_RATE",
    "CLASS_ORDER",
    "ClipRecord",
    "CorpusIndex",
    "Dastgah",
    "EnsemblePrior",
    "HeadModel",
    "InfeasibleCombinationError",
    "InstrumentClass",
    "LayerStack",
    "ManifestError",
    "N_CLASSES",
    "NoPeriodicityError",
    "PolymixError",
    "SEGMENT_SECONDS",
    "Strategy",
    "SynthConfig",
    "TrainConfig",
    "load_manifest",
    "read_lstk",
    "write_lstk",
    "__version__",
]
