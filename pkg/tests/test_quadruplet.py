import copy
import json

import numpy as np
import pytest

from acxkit.quadruplet import (
    MIN_DELTA,
    Quadruplet,
    make_batch,
    make_quadruplet,
    read_quad_manifest,
    validate_batch_records,
    validate_manifest,
    validate_quadruplet_record,
    write_quad_manifest,
)
from acxkit.scenario import ConfigurationError

POOL = [f"u{i}" for i in range(10)]
ROOM_RANK = {"small": 0, "medium": 1, "large": 2}


def independent_check(q: dict) -> list[str]:
    """Re-derive the invariants from the serialized record alone."""
    errs = []
    a, p, h, c = q["anchor"], q["positive"], q["hard_negative"], q["clean_ref"]
    if a["spec"] != p["spec"]:
        errs.append("anchor/positive spec differ")
    if a["utterance_id"] == p["utterance_id"]:
        errs.append("anchor/positive share utterance")
    if h["utterance_id"] not in (a["utterance_id"], p["utterance_id"]):
        errs.append("hard negative utterance")
    if c["utterance_id"] != a["utterance_id"] or set(c["spec"]) - {"spec_id"}:
        errs.append("clean ref")
    sa = {k: v for k, v in a["spec"].items() if k != "spec_id"}
    sh = {k: v for k, v in h["spec"].items() if k != "spec_id"}
    if set(sa) != set(sh):
        errs.append("presence differs")
        return errs
    changed = {k for k in sa if sa[k] != sh[k]}
    allowed = [{"snr_db"}, {"cutoff_hz"}, {"clip_factor"}, {"rir_id", "room_size"}]
    if changed not in allowed:
        errs.append(f"changed fields {sorted(changed)}")
    elif changed == {"snr_db"} and abs(sa["snr_db"] - sh["snr_db"]) < 5 - 1e-9:
        errs.append("snr delta")
    elif changed == {"cutoff_hz"} and abs(sa["cutoff_hz"] - sh["cutoff_hz"]) < 1000 - 1e-9:
        errs.append("cutoff delta")
    elif changed == {"clip_factor"} and abs(sa["clip_factor"] - sh["clip_factor"]) < 0.15 - 1e-9:
        errs.append("clip delta")
    elif changed == {"rir_id", "room_size"} and sa["room_size"] == sh["room_size"]:
        errs.append("room unchanged")
    return errs


@pytest.fixture(scope="module")
def draws(assets):
    rng = np.random.default_rng(77)
    presence = {"noise": 0.5, "reverb": 0.5, "bandlimit": 0.5, "clip": 0.5}
    return [make_quadruplet(rng, POOL, assets, presence) for _ in range(1000)]


def test_invariants_over_1000_draws(draws):
    for q in draws:
        rec = json.loads(json.dumps(q.to_dict()))
        assert independent_check(rec) == []
        assert validate_quadruplet_record(rec) == []


def test_shared_assets(draws):
    for q in draws:
        assert q.anchor.spec.noise_id == q.positive.spec.noise_id
        assert q.anchor.spec.rir_id == q.positive.spec.rir_id


def test_noise_delta_rule(assets):
    rng = np.random.default_rng(3)
    n = 0
    for _ in range(1000):
        q = make_quadruplet(rng, POOL, assets, {"noise": 1.0, "reverb": 0.0, "bandlimit": 0.0, "clip": 0.0})
        a, h = q.anchor.spec, q.hard_negative.spec
        assert h.noise_id == a.noise_id
        assert abs(h.snr_db - a.snr_db) >= MIN_DELTA["snr_db"]
        n += 1
    assert n == 1000


def test_pool_too_small(assets, rng):
    with pytest.raises(ConfigurationError):
        make_quadruplet(rng, ["only"], assets)


def test_batch_of_two(assets, rng):
    b = make_batch(rng, 2, POOL, assets)
    assert len(b) == 2
    assert b.quads[0].spec_id != b.quads[1].spec_id


@pytest.mark.parametrize("size", [2, 3, 8])
def test_weak_negative_count(assets, rng, size):
    b = make_batch(rng, size, POOL, assets)
    for i in range(size):
        weak = b.weak_negatives(i)
        assert len(weak) == 2 * (size - 1)
        assert all(b.quads[j].spec_id != b.quads[i].spec_id for _, j in weak)


def test_batch_deterministic(assets):
    a = make_batch(np.random.default_rng(5), 4, POOL, assets)
    b = make_batch(np.random.default_rng(5), 4, POOL, assets)
    assert a == b


def test_batch_size_error(assets, rng):
    with pytest.raises(ConfigurationError):
        make_batch(rng, 1, POOL, assets)


def test_manifest_round_trip_and_validation(tmp_path, assets, rng):
    batches = [make_batch(rng, 4, POOL, assets) for _ in range(3)]
    path = tmp_path / "q.jsonl"
    write_quad_manifest(path, batches, {"seed": 1})
    assert validate_manifest(path) == []
    meta, quads = read_quad_manifest(path)
    assert quads == [q for b in batches for q in b.quads]


def corrupted_records(q: Quadruplet) -> list[dict]:
    base = json.loads(json.dumps(q.to_dict()))
    out = []
    r = copy.deepcopy(base); r["positive"]["utterance_id"] = r["anchor"]["utterance_id"]; out.append(r)
    r = copy.deepcopy(base); r["hard_negative"]["utterance_id"] = "stranger"; out.append(r)
    r = copy.deepcopy(base); r["hard_negative"]["spec"] = dict(r["anchor"]["spec"]); out.append(r)
    r = copy.deepcopy(base); r["clean_ref"]["utterance_id"] = r["positive"]["utterance_id"]; out.append(r)
    return out


def test_validator_catches_corruption(draws):
    for q in draws[:50]:
        for bad in corrupted_records(q):
            assert validate_quadruplet_record(bad), bad


def test_validator_catches_small_delta(assets):
    rng = np.random.default_rng(8)
    q = make_quadruplet(rng, POOL, assets, {"noise": 1.0, "reverb": 0.0, "bandlimit": 0.0, "clip": 0.0})
    rec = json.loads(json.dumps(q.to_dict()))
    snr = rec["anchor"]["spec"]["snr_db"]
    rec["hard_negative"]["spec"]["snr_db"] = snr + 1.0 if snr < 15 else snr - 1.0
    rec["hard_negative"]["spec"].pop("spec_id")
    assert validate_quadruplet_record(rec)


def test_validator_catches_repeated_condition(assets, rng):
    b = make_batch(rng, 3, POOL, assets)
    recs = [json.loads(json.dumps(q.to_dict())) for q in b.quads]
    recs[2] = copy.deepcopy(recs[0])
    assert validate_batch_records(recs)
