"""Encoder backends.

An encoder is anything with the metadata triple (n_layers, dim,
sample_rate) and a `hidden_states(samples) -> [L x T x D]` method that is
deterministic for fixed input. Backends register under an identifier
string; `load_encoder` is the only way the exporter obtains one, so a bad
identifier or a broken backend fails the whole run up front rather than
mid-export.

The built-in backends are small deterministic feature extractors, useful
for wiring and testing. A real pretrained model just needs a wrapper class
with the same surface, registered under its own id.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np


class EncoderLoadError(Exception):
    """Encoder identifier unknown, or the backend failed to initialize."""


@dataclass(frozen=True)
class EncoderInfo:
    """Config metadata the exporter verifies its output headers against."""

    identifier: str
    n_layers: int
    dim: int
    sample_rate: int


class _ProjectionEncoder:
    """Log-spectrum frames through per-layer fixed random projections.

    Weights are seeded from the identifier alone, so two processes loading
    the same id produce bit-identical hidden states.
    """

    def __init__(self, identifier: str, n_layers: int, dim: int,
                 sample_rate: int, frame: int = 512):
        self.info = EncoderInfo(identifier, n_layers, dim, sample_rate)
        self._frame = frame
        seed = zlib.crc32(identifier.encode("utf-8"))
        rng = np.random.Generator(np.random.PCG64(seed))
        n_bins = frame // 2 + 1
        scale = 1.0 / np.sqrt(n_bins)
        self._weights = rng.uniform(-scale, scale,
                                    size=(n_layers, dim, n_bins))

    def hidden_states(self, samples: np.ndarray) -> np.ndarray:
        """[L x T x D] activations; at least one frame even for tiny input."""
        x = np.asarray(samples, dtype=np.float64)
        if len(x) < self._frame:
            x = np.pad(x, (0, self._frame - len(x)))
        n_frames = len(x) // self._frame
        frames = x[:n_frames * self._frame].reshape(n_frames, self._frame)
        spectra = np.log1p(np.abs(np.fft.rfft(frames, axis=1)))
        # [L x D x B] @ [B x T] -> [L x D x T] -> [L x T x D]
        acts = np.tanh(np.einsum("ldb,tb->ltd", self._weights, spectra))
        return acts


_REGISTRY: dict[str, Callable[[], object]] = {
    "toy/mini-4x48": lambda: _ProjectionEncoder("toy/mini-4x48", 4, 48, 16000),
    "toy/nano-2x16": lambda: _ProjectionEncoder("toy/nano-2x16", 2, 16, 8000),
}


def register_encoder(identifier: str, factory: Callable[[], object]) -> None:
    _REGISTRY[identifier] = factory


def available_encoders() -> list[str]:
    return sorted(_REGISTRY)


def load_encoder(identifier: str):
    if identifier not in _REGISTRY:
        raise EncoderLoadError(
            f"unknown encoder {identifier!r}; available: "
            f"{', '.join(available_encoders())}")
    try:
        encoder = _REGISTRY[identifier]()
    except Exception as exc:
        raise EncoderLoadError(f"encoder {identifier!r} failed to load: {exc}")
    info = getattr(encoder, "info", None)
    if info is None or info.n_layers < 1 or info.dim < 1 or info.sample_rate < 1:
        raise EncoderLoadError(f"encoder {identifier!r} has invalid metadata")
    return encoder
