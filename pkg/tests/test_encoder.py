import math
import struct

import numpy as np
import pytest

from acxkit.acx.losses import cos_sim
from acxkit.audio import AudioBuffer, synth_utterance
from acxkit.encoder import (
    EmbeddingFormatError,
    EncoderConfig,
    EncoderInputError,
    MelStatEncoder,
    encode_melstat,
    load_embeddings,
    save_embeddings,
)
from acxkit.scenario import DistortionSpec, apply_spec


@pytest.fixture(scope="module")
def enc():
    return MelStatEncoder()


def test_shape_and_determinism(enc):
    x = synth_utterance(1, 1.0)
    a, b = enc(x), MelStatEncoder()(x)
    assert a.shape == (512,)
    assert np.array_equal(a, b)
    assert enc.features(x).shape == (256,)


def test_parameters_read_only(enc):
    with pytest.raises(ValueError):
        enc.projection[0, 0] = 1.0
    assert enc.checksum() == MelStatEncoder().checksum()
    assert enc.checksum() != MelStatEncoder(EncoderConfig(seed=1)).checksum()


def test_silence_features(enc):
    lm = enc.log_mel(AudioBuffer(np.zeros(8000), 16000))
    feats = enc.features(AudioBuffer(np.zeros(8000), 16000))
    n = enc.config.n_mels
    np.testing.assert_allclose(feats[:n], math.log(1e-3), rtol=0, atol=1e-12)
    np.testing.assert_allclose(feats[n:2 * n], 0.0, rtol=0, atol=1e-12)
    assert lm.shape[1] == n


def test_frame_count(enc):
    n = 16000
    frames = enc.log_mel(AudioBuffer(np.ones(n) * 0.1, 16000)).shape[0]
    assert frames == 1 + (n - 400) // 160


def test_noisy_less_similar_than_clean(enc, assets):
    x = synth_utterance(4, 1.0)
    noisy = apply_spec(x, DistortionSpec(noise_id=assets.noise_ids[0], snr_db=0.0), assets)
    assert cos_sim(enc(x), enc(x)) == pytest.approx(1.0, abs=1e-12)
    assert cos_sim(enc(x), enc(noisy)) < 1.0


def test_gain_normalize_option():
    x = synth_utterance(6, 1.0)
    louder = x.with_samples(x.samples * 2.0)
    plain = MelStatEncoder()
    norm = MelStatEncoder(EncoderConfig(gain_normalize=True))
    assert cos_sim(norm(x), norm(louder)) >= 0.99
    assert not np.allclose(plain(x), plain(louder))


def test_input_errors(enc):
    with pytest.raises(EncoderInputError):
        enc(AudioBuffer(np.ones(100), 16000))
    with pytest.raises(EncoderInputError):
        enc(AudioBuffer(np.ones(8000), 8000))


def test_convenience_wrapper():
    x = synth_utterance(2, 0.5)
    assert np.array_equal(encode_melstat(x), MelStatEncoder()(x))


def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = {f"utt{i}@spec{i}": rng.standard_normal(7).astype(np.float32).astype(np.float64) for i in range(5)}
    data["ünïcode"] = np.ones(7)
    save_embeddings(tmp_path / "e.acxe", data)
    back = load_embeddings(tmp_path / "e.acxe")
    assert list(back) == list(data)
    for k in data:
        assert np.array_equal(back[k], data[k])


def test_container_layout(tmp_path):
    save_embeddings(tmp_path / "e.acxe", {"ab": np.array([1.0, 2.0])})
    raw = (tmp_path / "e.acxe").read_bytes()
    assert raw[:4] == b"ACXE"
    assert struct.unpack_from("<IIQ", raw, 4) == (1, 2, 1)
    assert raw[20:22] == struct.pack("<H", 2) and raw[22:24] == b"ab"
    assert np.frombuffer(raw[24:], "<f4").tolist() == [1.0, 2.0]


def test_empty_container(tmp_path):
    save_embeddings(tmp_path / "e.acxe", {}, dim=4)
    assert load_embeddings(tmp_path / "e.acxe") == {}


def test_mixed_dims_rejected(tmp_path):
    with pytest.raises(EmbeddingFormatError):
        save_embeddings(tmp_path / "e.acxe", {"a": np.ones(3), "b": np.ones(4)})
    # hand-built file with rows of two dims
    head = b"ACXE" + struct.pack("<IIQ", 1, 3, 2)
    row = lambda key, v: struct.pack("<H", len(key)) + key + np.asarray(v, "<f4").tobytes()
    (tmp_path / "bad.acxe").write_bytes(head + row(b"a", [1, 2, 3]) + row(b"b", [1, 2, 3, 4]))
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(tmp_path / "bad.acxe")


def test_duplicate_id_rejected(tmp_path):
    head = b"ACXE" + struct.pack("<IIQ", 1, 1, 2)
    row = struct.pack("<H", 1) + b"a" + np.ones(1, "<f4").tobytes()
    (tmp_path / "dup.acxe").write_bytes(head + row + row)
    with pytest.raises(EmbeddingFormatError, match="duplicate"):
        load_embeddings(tmp_path / "dup.acxe")


def test_bad_magic_and_truncation(tmp_path):
    (tmp_path / "m.acxe").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(tmp_path / "m.acxe")
    save_embeddings(tmp_path / "t.acxe", {"a": np.ones(4)})
    raw = (tmp_path / "t.acxe").read_bytes()
    (tmp_path / "t.acxe").write_bytes(raw[:-3])
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(tmp_path / "t.acxe")
