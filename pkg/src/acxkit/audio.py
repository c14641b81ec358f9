"""Mono audio buffers, WAV I/O and a seeded speech-like signal generator."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.io import wavfile

CANONICAL_RATE = 16000
PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    """Malformed or unreadable RIFF/WAVE content."""


class UnsupportedFormatError(AudioFormatError):
    """Well-formed WAV with an encoding we do not accept."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioBuffer needs 1-D samples, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("AudioBuffer must hold at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def power(self) -> float:
        """Mean squared amplitude."""
        return float(np.mean(self.samples ** 2))

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate_hz)


def read_wav(path: str | os.PathLike) -> AudioBuffer:
    """Load a 16-bit PCM or 32-bit float WAV, downmixing channels by averaging."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample encoding {data.dtype}; expected int16 PCM or float32"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioFormatError(f"{path}: no audio frames")
    return AudioBuffer(samples, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * PCM_SCALE), -32768, 32767).astype(np.int16)


def write_wav(buffer: AudioBuffer, path: str | os.PathLike) -> None:
    """Write ``buffer`` as 16-bit little-endian mono PCM; out-of-range values saturate."""
    wavfile.write(os.fspath(path), buffer.sample_rate_hz, to_pcm16(buffer.samples))


def quantize(buffer: AudioBuffer) -> AudioBuffer:
    """What ``read_wav(write_wav(buffer))`` would return, without touching disk."""
    return buffer.with_samples(to_pcm16(buffer.samples).astype(np.float64) / PCM_SCALE)


def _resonator(freq_hz: float, bandwidth_hz: float, rate: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bandwidth_hz / rate)
    theta = 2 * np.pi * freq_hz / rate
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([1.0 - r]), a


def _formant_gain(freqs: np.ndarray, formants: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    gain = np.zeros_like(freqs)
    for f, bw in zip(formants, bandwidths):
        gain += 1.0 / (1.0 + ((freqs - f) / (0.5 * bw)) ** 2)
    # spectral tilt of glottal flow
    return gain / (1.0 + freqs / 500.0)


def synth_utterance(seed: int, duration_s: float, sample_rate_hz: int = CANONICAL_RATE) -> AudioBuffer:
    """Deterministic speech-like test signal.

    Syllables alternate between a voiced part (harmonic series on a wandering
    pitch contour, shaped by per-syllable formants) and occasional
    formant-filtered noise bursts standing in for fricatives. The result is
    peak-normalized to 0.9.
    """
    if not duration_s > 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    rate = int(sample_rate_hz)
    n = max(1, int(round(duration_s * rate)))
    rng = np.random.default_rng([int(seed), 0x5EEC])
    t = np.arange(n) / rate
    nyquist = rate / 2

    f0_base = rng.uniform(90.0, 240.0)
    contour = np.zeros(n)
    for _ in range(3):
        contour += rng.uniform(0.02, 0.08) * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = f0_base * (1.0 + contour)
    phase = 2 * np.pi * np.cumsum(f0) / rate

    voiced = np.zeros(n)
    bursts = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.05) * rate)
    while pos < n:
        syl_len = int(rng.uniform(0.10, 0.28) * rate)
        gap = int(rng.uniform(0.02, 0.10) * rate)
        end = min(n, pos + syl_len)
        seg = slice(pos, end)
        m = end - pos
        formants = np.array([rng.uniform(280, 850), rng.uniform(850, 2400), rng.uniform(2200, 3400)])
        bws = np.array([rng.uniform(60, 120), rng.uniform(80, 180), rng.uniform(120, 250)])
        envelope = np.sin(np.pi * np.linspace(0.0, 1.0, m)) ** rng.uniform(0.5, 1.5)
        loudness = rng.uniform(0.4, 1.0)
        f0_seg = f0[seg]
        n_harm = int(min(40, nyquist / (f0_base * 1.1) - 1))
        seg_sum = np.zeros(m)
        for k in range(1, n_harm + 1):
            amp = _formant_gain(k * f0_seg, formants, bws)
            seg_sum += amp * np.sin(k * phase[seg])
        voiced[seg] += loudness * envelope * seg_sum

        if rng.random() < 0.45:
            b_len = min(n - pos, int(rng.uniform(0.04, 0.12) * rate))
            if b_len > 8:
                fc = min(rng.uniform(2500, 6000), 0.9 * nyquist)
                b, a = _resonator(fc, rng.uniform(800, 2000), rate)
                noise = signal.lfilter(b, a, rng.standard_normal(b_len))
                win = np.hanning(b_len)
                bursts[pos:pos + b_len] += rng.uniform(0.1, 0.4) * win * noise / (np.max(np.abs(noise)) + 1e-12)
        pos = end + gap

    voiced /= np.max(np.abs(voiced)) + 1e-12
    x = voiced + bursts
    # low-level breath noise keeps every frame non-silent
    x += 1e-3 * rng.standard_normal(n)
    x *= 0.9 / np.max(np.abs(x))
    return AudioBuffer(x, rate)
