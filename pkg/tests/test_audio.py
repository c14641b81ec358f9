import numpy as np
import pytest
from scipy.io import wavfile

from acxkit.audio import (
    AudioBuffer,
    AudioFormatError,
    UnsupportedFormatError,
    read_wav,
    synth_utterance,
    write_wav,
)


def test_pcm_scaling(tmp_path):
    path = tmp_path / "x.wav"
    wavfile.write(path, 16000, np.array([16384, -32768, 0, 32767], dtype=np.int16))
    buf = read_wav(path)
    assert buf.sample_rate_hz == 16000
    assert buf.samples[0] == 0.5
    assert buf.samples[1] == -1.0
    assert buf.samples[2] == 0.0


def test_stereo_downmix(tmp_path):
    path = tmp_path / "s.wav"
    wavfile.write(path, 16000, np.array([[0.2, 0.6], [-0.4, 0.0]], dtype=np.float32))
    buf = read_wav(path)
    np.testing.assert_allclose(buf.samples, [0.4, -0.2], atol=1e-7)


def test_unsupported_encoding(tmp_path):
    path = tmp_path / "u8.wav"
    wavfile.write(path, 16000, np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(UnsupportedFormatError):
        read_wav(path)


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFF\x00\x00not a wave file")
    with pytest.raises(AudioFormatError):
        read_wav(path)


def test_round_trip_within_one_step(tmp_path):
    rng = np.random.default_rng(0)
    x = AudioBuffer(rng.uniform(-1, 1, 4000), 16000)
    write_wav(x, tmp_path / "r.wav")
    y = read_wav(tmp_path / "r.wav")
    assert np.max(np.abs(x.samples - y.samples)) <= 1 / 32768


def test_half_amplitude_round_trip(tmp_path):
    write_wav(AudioBuffer(np.array([0.5]), 16000), tmp_path / "h.wav")
    assert wavfile.read(tmp_path / "h.wav")[1][0] == 16384
    assert abs(read_wav(tmp_path / "h.wav").samples[0] - 0.5) <= 1 / 32768


def test_saturation(tmp_path):
    write_wav(AudioBuffer(np.array([1.0, -1.0]), 16000), tmp_path / "sat.wav")
    rate, data = wavfile.read(tmp_path / "sat.wav")
    assert data.dtype == np.int16
    assert list(data) == [32767, -32768]


def test_silence(tmp_path):
    write_wav(AudioBuffer(np.zeros(123), 16000), tmp_path / "z.wav")
    data = wavfile.read(tmp_path / "z.wav")[1]
    assert data.size == 123 and not data.any()


def test_buffer_validation():
    with pytest.raises(ValueError):
        AudioBuffer(np.array([np.nan]), 16000)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(4), 0)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(0), 16000)


def test_synth_deterministic():
    a = synth_utterance(7, 1.0, 16000)
    b = synth_utterance(7, 1.0, 16000)
    assert np.array_equal(a.samples, b.samples)


@pytest.mark.parametrize("seed", [0, 1, 7, 123456])
def test_synth_peak(seed):
    assert abs(synth_utterance(seed, 0.5).peak - 0.9) <= 1e-6


def test_synth_seeds_differ():
    a, b = synth_utterance(1, 1.0).samples, synth_utterance(2, 1.0).samples
    assert np.mean(a != b) >= 0.01
