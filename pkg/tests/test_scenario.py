import json
import math

import numpy as np
import pytest

from acxkit import dsp
from acxkit.audio import AudioBuffer, read_wav, synth_utterance, write_wav
from acxkit.scenario import (
    CLEAN_SPEC,
    AssetError,
    AssetPool,
    ConfigurationError,
    CorpusManifest,
    DistortionSpec,
    SpecError,
    Utterance,
    apply_spec,
    bandlimit,
    build_subsets,
    build_training_corpus,
    materialize,
    noise_offset,
    render,
    sample_spec,
    subset_grid,
)


@pytest.fixture(scope="module")
def clean():
    return synth_utterance(11, 1.0)


def test_empty_spec_is_identity(clean, assets):
    assert np.array_equal(apply_spec(clean, CLEAN_SPEC, assets).samples, clean.samples)


def test_clip_only_equals_primitive(clean, assets):
    out = apply_spec(clean, DistortionSpec(clip_factor=0.5), assets)
    assert np.array_equal(out.samples, dsp.clip_amplitude(clean, 0.5).samples)


def test_snr_only_measured(clean, assets):
    spec = DistortionSpec(noise_id=assets.noise_ids[0], snr_db=0.0)
    r = render(clean, spec, assets)
    snr = 10 * math.log10(np.mean(r.speech_part ** 2) / np.mean(r.noise_part ** 2))
    assert snr == pytest.approx(0.0, abs=0.01)
    assert np.array_equal(r.output.samples, r.speech_part + r.noise_part)


def test_order_reverb_noise_band_clip(clean, assets):
    spec = DistortionSpec(noise_id=assets.noise_ids[1], snr_db=5.0, rir_id=assets.rir_ids("small")[0],
                          room_size="small", cutoff_hz=3000.0, clip_factor=0.2)
    x = dsp.apply_rir(clean, assets.rir(spec.rir_id))
    noise = assets.noise(spec.noise_id)
    s_part, n_part = dsp.mix_components(x, noise, 5.0, offset=noise_offset(spec, len(noise), len(x)))
    x = bandlimit(x.with_samples(s_part + n_part), 3000.0)
    expected = dsp.clip_amplitude(x, 0.2)
    assert np.array_equal(apply_spec(clean, spec, assets).samples, expected.samples)


def test_apply_spec_deterministic(clean, assets, rng):
    spec = sample_spec(rng, None, assets)
    a, b = apply_spec(clean, spec, assets), apply_spec(clean, spec, assets)
    assert np.array_equal(a.samples, b.samples)


def test_unknown_asset(clean, assets):
    with pytest.raises(AssetError):
        apply_spec(clean, DistortionSpec(noise_id="nope", snr_db=3.0), assets)


def test_spec_validation():
    with pytest.raises(SpecError):
        DistortionSpec(snr_db=3.0)
    with pytest.raises(SpecError):
        DistortionSpec(noise_id="n", snr_db=31.0)
    with pytest.raises(SpecError):
        DistortionSpec(cutoff_hz=900.0)
    with pytest.raises(SpecError):
        DistortionSpec(clip_factor=0.6)


def test_spec_id_stable_and_round_trips():
    s = DistortionSpec(noise_id="a", snr_db=1.5, cutoff_hz=2000.0)
    assert s.spec_id == DistortionSpec(noise_id="a", snr_db=1.5, cutoff_hz=2000.0).spec_id
    assert s.spec_id != DistortionSpec(noise_id="a", snr_db=1.6, cutoff_hz=2000.0).spec_id
    assert DistortionSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    bad = s.to_dict()
    bad["spec_id"] = "0" * 16
    with pytest.raises(SpecError):
        DistortionSpec.from_dict(bad)


def test_sample_spec_full_constraint(assets, rng):
    c = {"noise_id": assets.noise_ids[2], "snr_db": 4.0, "rir_id": assets.rir_ids("large")[0],
         "room_size": "large", "cutoff_hz": 2500.0, "clip_factor": 0.1}
    assert sample_spec(rng, c, assets) == DistortionSpec(**c)


def test_sample_spec_snr_constraint(assets, rng):
    draws = [sample_spec(rng, {"snr_db": 10.0}, assets) for _ in range(1000)]
    assert all(d.snr_db == 10.0 for d in draws)
    assert len({d.noise_id for d in draws}) > 1
    assert len({d.cutoff_hz for d in draws}) > 100


def test_sample_spec_uniform_mean(assets, rng):
    snrs = [sample_spec(rng, None, assets).snr_db for _ in range(10000)]
    assert abs(np.mean(snrs) - 7.5) <= 0.5
    assert min(snrs) >= -5 and max(snrs) <= 20


def test_sample_spec_empty_pool(rng):
    with pytest.raises(ConfigurationError):
        sample_spec(rng, None, AssetPool())


def test_subset_grid_shape():
    grid = subset_grid()
    assert len(grid) == 13
    assert [c["snr_db"] for _, c in grid[:6]] == [-5, 0, 5, 10, 15, 20]
    assert [c["cutoff_hz"] for _, c in grid[6:10]] == [1000, 3000, 5000, 7000]
    assert [c["room_size"] for _, c in grid[10:]] == ["large", "medium", "small"]


def pool(n=4):
    return [Utterance(f"u{i}", f"clean/u{i}.wav") for i in range(n)]


def test_build_subsets(assets):
    ms = build_subsets(pool(), assets, seed=5, per_subset=6)
    assert len(ms) == 13
    for m in ms:
        assert len(m.entries) == 6
        (key, value), = m.controlled.items()
        assert all(getattr(e.spec, key) == value for e in m.entries)
    snr_m5 = ms[0]
    assert all(e.spec.snr_db == -5.0 for e in snr_m5.entries)
    assert [m.dumps() for m in build_subsets(pool(), assets, 5, 6)] == [m.dumps() for m in ms]


def test_build_subsets_errors(assets):
    with pytest.raises(ConfigurationError):
        build_subsets(pool(), assets, 5, 0)
    with pytest.raises(ConfigurationError):
        build_subsets([], assets, 5, 1)


def test_materialize_round_trip(tmp_path, assets):
    utts = pool(3)
    (tmp_path / "clean").mkdir()
    for i, u in enumerate(utts):
        write_wav(synth_utterance(i, 0.5), tmp_path / u.clean_path)
    m = build_training_corpus(utts, assets, seed=1, specs_per_utterance=2)
    materialize(m, tmp_path, assets)
    m.write(tmp_path / "train.jsonl")
    back = CorpusManifest.read(tmp_path / "train.jsonl")
    assert back.dumps() == m.dumps()
    for e in back.entries:
        assert (tmp_path / e.degraded_path).exists()
        if "measured_snr_db" in e.checks:
            assert abs(e.checks["measured_snr_db"] - e.spec.snr_db) <= 0.01


def test_asset_pool_round_trip(tmp_path, assets):
    assets.write(tmp_path / "a")
    back = AssetPool.load(tmp_path / "a")
    assert back.noise_ids == assets.noise_ids
    assert back.rir_rooms == assets.rir_rooms
    n0 = assets.noise_ids[0]
    assert np.max(np.abs(back.noise(n0).samples - assets.noise(n0).samples)) <= 1 / 32768


def test_missing_asset_directory(tmp_path):
    with pytest.raises(ConfigurationError, match="does-not-exist"):
        AssetPool().add_directories([str(tmp_path / "does-not-exist")], {})
