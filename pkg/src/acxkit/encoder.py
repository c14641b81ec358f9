"""Frozen utterance encoder (log-mel statistics + fixed random projection) and embedding files.

The encoder is a stand-in for a large pretrained audio model: every parameter
is fixed at construction from a single seed and marked read-only, so the same
config produces the same embeddings on any machine.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .audio import AudioBuffer

MAGIC = b"ACXE"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class EncoderInputError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    sample_rate_hz: int = 16000
    n_mels: int = 64
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    dim: int = 512
    seed: int = 0
    log_floor: float = 1e-3
    gain_normalize: bool = False
    min_duration_s: float = 0.2

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "EncoderConfig":
        return cls(**dict(d or {}))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1)."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate_hz)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lower) / (center - lower)
    down = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(up, down))


class MelStatEncoder:
    N_STATS = 4

    def __init__(self, config: EncoderConfig | None = None):
        self.config = config or EncoderConfig()
        c = self.config
        self.win = int(round(c.win_ms * c.sample_rate_hz / 1000))
        self.hop = int(round(c.hop_ms * c.sample_rate_hz / 1000))
        if self.win > c.n_fft:
            raise ValueError(f"window of {self.win} samples exceeds n_fft={c.n_fft}")
        self.window = np.hanning(self.win)
        self.fbank = mel_filterbank(c.n_mels, c.n_fft, c.sample_rate_hz)
        n_feat = self.N_STATS * c.n_mels
        rng = np.random.default_rng([c.seed, 0xE4C0DE])
        self.projection = rng.standard_normal((c.dim, n_feat)) / np.sqrt(n_feat)
        for arr in (self.window, self.fbank, self.projection):
            arr.setflags(write=False)
        self._checksum = self.checksum()

    @property
    def dim(self) -> int:
        return self.config.dim

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(repr(sorted(asdict(self.config).items())).encode())
        for arr in (self.window, self.fbank, self.projection):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def log_mel(self, x: AudioBuffer) -> np.ndarray:
        """Log-mel spectrogram, shape (frames, n_mels)."""
        c = self.config
        if x.sample_rate_hz != c.sample_rate_hz:
            raise EncoderInputError(f"expected {c.sample_rate_hz} Hz audio, got {x.sample_rate_hz} Hz")
        if x.duration_s < c.min_duration_s:
            raise EncoderInputError(f"signal of {x.duration_s:.3f} s is shorter than {c.min_duration_s} s")
        s = x.samples
        if c.gain_normalize:
            rms = np.sqrt(np.mean(s ** 2))
            s = s / rms * 0.1 if rms > 0 else s
        frames = np.lib.stride_tricks.sliding_window_view(s, self.win)[::self.hop] * self.window
        power = np.abs(np.fft.rfft(frames, n=c.n_fft, axis=1)) ** 2
        return np.log(np.maximum(power @ self.fbank.T, c.log_floor))

    def features(self, x: AudioBuffer) -> np.ndarray:
        lm = self.log_mel(x)
        p10, p90 = np.percentile(lm, [10, 90], axis=0)
        return np.concatenate([lm.mean(axis=0), lm.std(axis=0), p10, p90])

    def encode(self, x: AudioBuffer) -> np.ndarray:
        return self.projection @ self.features(x)

    __call__ = encode


def encode_melstat(signal: AudioBuffer, config: EncoderConfig | None = None) -> np.ndarray:
    return MelStatEncoder(config).encode(signal)


# --------------------------------------------------------------------------- container

def save_embeddings(path: str | os.PathLike, embeddings: Mapping[str, np.ndarray], dim: int | None = None) -> None:
    """Write ``{item_id: vector}`` as float32 rows in insertion order."""
    if dim is None:
        dim = len(next(iter(embeddings.values()))) if embeddings else 0
    parts = [_HEADER.pack(MAGIC, VERSION, dim, len(embeddings))]
    for key, vec in embeddings.items():
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise EmbeddingFormatError(f"{key}: expected dim {dim}, got shape {vec.shape}")
        raw = key.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + vec.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_embeddings(path: str | os.PathLike) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    pos = _HEADER.size
    row = 4 * dim
    for _ in range(count):
        if pos + 2 > len(data):
            raise EmbeddingFormatError(f"{path}: truncated row")
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        try:
            key = data[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EmbeddingFormatError(f"{path}: corrupt row id ({exc})") from None
        pos += n
        if pos + row > len(data):
            raise EmbeddingFormatError(f"{path}: truncated vector for {key!r}")
        if key in out:
            raise EmbeddingFormatError(f"{path}: duplicate id {key!r}")
        out[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += row
    if pos != len(data):
        raise EmbeddingFormatError(f"{path}: {len(data) - pos} trailing bytes (dimension mismatch?)")
    return out
