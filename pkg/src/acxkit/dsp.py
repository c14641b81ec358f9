"""Distortion primitives: noise mixing, FIR low-pass, resampling, reverberation, clipping."""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer

ROOM_T60 = {"small": 0.15, "medium": 0.5, "large": 1.0}
ROOM_SIZES = ("small", "medium", "large")
DEFAULT_TAPS = 511
PEAK_CEILING = 0.99


class DegenerateInputError(ValueError):
    pass


class RateMismatchError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    description: str = ""

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise ParameterError("FIR filters must have an odd number of taps")
        object.__setattr__(self, "taps", taps)

    @property
    def delay(self) -> int:
        return (self.taps.size - 1) // 2


def _check_rates(a: AudioBuffer, b: AudioBuffer) -> None:
    if a.sample_rate_hz != b.sample_rate_hz:
        raise RateMismatchError(f"sample rates differ: {a.sample_rate_hz} vs {b.sample_rate_hz}")


def mix_components(
    speech: AudioBuffer,
    noise: AudioBuffer,
    snr_db: float,
    offset: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return the (speech, scaled noise) parts whose sum is the mixture.

    The noise is cropped to the speech length starting at ``offset`` (drawn
    from ``rng`` when not given, else 0). Both parts are jointly attenuated
    when the sum would exceed full scale, which leaves their ratio intact.
    """
    _check_rates(speech, noise)
    n = len(speech)
    if len(noise) < n:
        raise ParameterError(f"noise shorter than speech ({len(noise)} < {n})")
    if offset is None:
        offset = int(rng.integers(0, len(noise) - n + 1)) if rng is not None else 0
    if not 0 <= offset <= len(noise) - n:
        raise ParameterError(f"noise offset {offset} out of range")
    s = speech.samples
    d = noise.samples[offset:offset + n]
    p_s = float(np.mean(s ** 2))
    p_n = float(np.mean(d ** 2))
    if p_n == 0.0:
        raise DegenerateInputError("noise segment has zero power")
    if p_s == 0.0:
        raise DegenerateInputError("speech has zero power")
    g = np.sqrt(p_s / p_n) * 10.0 ** (-snr_db / 20.0)
    s_part = s.copy()
    n_part = g * d
    peak = float(np.max(np.abs(s_part + n_part)))
    if peak > 1.0:
        k = PEAK_CEILING / peak
        s_part *= k
        n_part *= k
    return s_part, n_part


def mix_at_snr(speech: AudioBuffer, noise: AudioBuffer, snr_db: float, offset: int | None = None,
               rng: np.random.Generator | None = None) -> AudioBuffer:
    s_part, n_part = mix_components(speech, noise, snr_db, offset, rng)
    return speech.with_samples(s_part + n_part)


def noise_gain(speech: AudioBuffer, noise: AudioBuffer, snr_db: float) -> float:
    """Scale applied to ``noise`` (whole buffer as the mixed region) before peak protection."""
    return float(np.sqrt(speech.power() / noise.power()) * 10.0 ** (-snr_db / 20.0))


def measure_snr(speech_part: np.ndarray, noise_part: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(np.square(speech_part)) / np.mean(np.square(noise_part))))


def design_lowpass(cutoff_hz: float, sample_rate_hz: int, num_taps: int = DEFAULT_TAPS) -> FirFilter:
    """Hamming-windowed sinc low-pass with unity DC gain."""
    nyquist = sample_rate_hz / 2
    if not 0 < cutoff_hz < nyquist:
        raise ParameterError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    if num_taps < 1 or num_taps % 2 == 0:
        raise ParameterError(f"num_taps must be odd and positive, got {num_taps}")
    fc = cutoff_hz / sample_rate_hz
    m = np.arange(num_taps) - (num_taps - 1) / 2
    taps = 2 * fc * np.sinc(2 * fc * m) * np.hamming(num_taps)
    taps /= taps.sum()
    return FirFilter(taps, f"lowpass {cutoff_hz:g} Hz @ {sample_rate_hz} Hz, hamming, {num_taps} taps")


def _convolve_same(x: np.ndarray, taps: np.ndarray, delay: int) -> np.ndarray:
    full = sps.convolve(x, taps, mode="full", method="fft" if taps.size > 64 else "direct")
    return full[delay:delay + x.size]


def apply_fir(signal: AudioBuffer, filt: FirFilter) -> AudioBuffer:
    """Filter and shift back by the group delay so output lines up with input."""
    return signal.with_samples(_convolve_same(signal.samples, filt.taps, filt.delay))


def resample(signal: AudioBuffer, target_rate_hz: int, taps_per_phase: int = 24) -> AudioBuffer:
    """Polyphase rational resampling through a windowed-sinc anti-alias filter."""
    src = signal.sample_rate_hz
    target_rate_hz = int(target_rate_hz)
    if target_rate_hz <= 0:
        raise ParameterError("target rate must be positive")
    if target_rate_hz == src:
        return signal
    g = gcd(src, target_rate_hz)
    up, down = target_rate_hz // g, src // g
    fs_up = src * up
    num_taps = taps_per_phase * max(up, down) + 1
    cutoff = min(src, target_rate_hz) / 2
    taps = design_lowpass(cutoff, fs_up, num_taps).taps
    out = sps.resample_poly(signal.samples, up, down, window=taps)
    return AudioBuffer(out, target_rate_hz)


def apply_rir(speech: AudioBuffer, rir: AudioBuffer, normalize: bool = True) -> AudioBuffer:
    """Convolve with ``rir``, keep the speech length starting at the direct-path peak."""
    _check_rates(speech, rir)
    h = rir.samples
    if not np.any(h):
        raise DegenerateInputError("RIR is all zeros")
    direct = int(np.argmax(np.abs(h)))
    method = "fft" if h.size > 64 else "direct"
    full = sps.convolve(speech.samples, h, mode="full", method=method)
    out = full[direct:direct + len(speech)]
    if normalize:
        out_peak = np.max(np.abs(out))
        if out_peak > 0:
            out = out * (speech.peak / out_peak)
    return speech.with_samples(out)


def clip_amplitude(signal: AudioBuffer, clip_factor: float) -> AudioBuffer:
    """Clamp at ``(1 - clip_factor)`` times the signal's peak magnitude."""
    if not 0.0 <= clip_factor <= 0.5:
        raise ParameterError(f"clip_factor must lie in [0, 0.5], got {clip_factor}")
    if clip_factor == 0.0:
        return signal
    t = (1.0 - clip_factor) * signal.peak
    return signal.with_samples(np.clip(signal.samples, -t, t))


def synth_rir(seed: int, room_size: str, sample_rate_hz: int = 16000) -> AudioBuffer:
    """Exponentially decaying noise tail behind a unit direct-path impulse at t=0."""
    if room_size not in ROOM_T60:
        raise ParameterError(f"room_size must be one of {ROOM_SIZES}, got {room_size!r}")
    rng = np.random.default_rng([int(seed), ROOM_SIZES.index(room_size), 0x0121])
    t60 = ROOM_T60[room_size] * rng.uniform(0.8, 1.2)
    n = int(round(1.6 * t60 * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    # amplitude falls 60 dB over t60
    envelope = 10.0 ** (-3.0 * t / t60)
    predelay = int(rng.uniform(0.002, 0.008) * sample_rate_hz)
    tail = np.clip(rng.standard_normal(n), -3.5, 3.5) * rng.uniform(0.08, 0.2)
    tail[:predelay] = 0.0
    h = envelope * tail
    h = np.clip(h, -0.9, 0.9)
    h[0] = 1.0
    return AudioBuffer(h, sample_rate_hz)


def energy_decay_db(rir: np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy decay curve in dB re. total energy."""
    edc = np.cumsum(np.square(rir)[::-1])[::-1]
    return 10.0 * np.log10(np.maximum(edc / edc[0], 1e-300))


def measure_t60(rir: AudioBuffer, fit_range_db: tuple[float, float] = (-5.0, -35.0)) -> float:
    """T60 from a straight-line fit to the decay curve, extrapolated to -60 dB."""
    edc = energy_decay_db(rir.samples)
    hi, lo = fit_range_db
    idx = np.nonzero((edc <= hi) & (edc >= lo))[0]
    if idx.size < 2:
        raise DegenerateInputError("decay curve does not span the fit range")
    t = idx / rir.sample_rate_hz
    slope, _ = np.polyfit(t, edc[idx], 1)
    return float(-60.0 / slope)


def band_energy(x: np.ndarray, sample_rate_hz: int, f_lo: float, f_hi: float | None = None) -> float:
    """Hann-windowed spectral energy between ``f_lo`` and ``f_hi`` (default Nyquist)."""
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate_hz)
    f_hi = sample_rate_hz / 2 if f_hi is None else f_hi
    mask = (freqs >= f_lo) & (freqs <= f_hi)
    return float(spec[mask].sum())


def attenuation_db(before: np.ndarray, after: np.ndarray, sample_rate_hz: int, f_lo: float) -> float:
    """How far energy above ``f_lo`` dropped from ``before`` to ``after``."""
    e_in = band_energy(before, sample_rate_hz, f_lo)
    e_out = band_energy(after, sample_rate_hz, f_lo)
    return float(10.0 * np.log10(e_in / max(e_out, 1e-300)))


def tone_amplitude(x: np.ndarray, sample_rate_hz: int, freq_hz: float) -> float:
    """Least-squares amplitude of a sinusoid at ``freq_hz``."""
    t = np.arange(x.size) / sample_rate_hz
    basis = np.stack([np.sin(2 * np.pi * freq_hz * t), np.cos(2 * np.pi * freq_hz * t)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(np.hypot(*coef))
