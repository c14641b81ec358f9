"""Anchor/positive/hard-negative tuples and minibatches with distinct conditions."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .scenario import (
    CLEAN_SPEC,
    CLIP_RANGE,
    CUTOFF_RANGE,
    TRAIN_SNR_RANGE,
    AssetPool,
    ConfigurationError,
    DistortionSpec,
    sample_spec,
)

# smallest intensity change that still counts as a different condition
MIN_DELTA = {"snr_db": 5.0, "cutoff_hz": 1000.0, "clip_factor": 0.15}
INTENSITY_FIELD = {"noise": "snr_db", "reverb": "room_size", "bandlimit": "cutoff_hz", "clip": "clip_factor"}
_DECIMALS = {"snr_db": 3, "cutoff_hz": 1, "clip_factor": 4}
_TOL = 1e-9


@dataclass(frozen=True)
class Item:
    utterance_id: str
    spec: DistortionSpec

    @property
    def item_id(self) -> str:
        return f"{self.utterance_id}@{self.spec.spec_id if self.spec != CLEAN_SPEC else 'clean'}"

    def to_dict(self) -> dict:
        return {"utterance_id": self.utterance_id, "spec": self.spec.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Item":
        return cls(d["utterance_id"], DistortionSpec.from_dict(d["spec"]))


@dataclass(frozen=True)
class Quadruplet:
    anchor: Item
    positive: Item
    hard_negative: Item
    clean_ref: Item

    @property
    def spec_id(self) -> str:
        return self.anchor.spec.spec_id

    def items(self) -> tuple[Item, Item, Item, Item]:
        return self.anchor, self.positive, self.hard_negative, self.clean_ref

    def hard_delta(self) -> dict:
        a, h = self.anchor.spec, self.hard_negative.spec
        for factor, name in INTENSITY_FIELD.items():
            if getattr(a, name) != getattr(h, name):
                return {"factor": factor, "field": name, "from": getattr(a, name), "to": getattr(h, name)}
        return {}

    def to_dict(self) -> dict:
        return {"anchor": self.anchor.to_dict(), "positive": self.positive.to_dict(),
                "hard_negative": self.hard_negative.to_dict(), "clean_ref": self.clean_ref.to_dict(),
                "hard_delta": self.hard_delta()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Quadruplet":
        return cls(Item.from_dict(d["anchor"]), Item.from_dict(d["positive"]),
                   Item.from_dict(d["hard_negative"]), Item.from_dict(d["clean_ref"]))


@dataclass(frozen=True)
class QuadBatch:
    quads: tuple[Quadruplet, ...]

    def __len__(self) -> int:
        return len(self.quads)

    def weak_negatives(self, i: int) -> list[tuple[str, int]]:
        """Weak negatives of anchor ``i``: every other quadruplet's positive and anchor."""
        others = [j for j in range(len(self.quads)) if j != i]
        return [("positive", j) for j in others] + [("anchor", j) for j in others]


def _draw_away(rng: np.random.Generator, value: float, lo: float, hi: float, min_delta: float,
               decimals: int) -> float:
    left = max(0.0, (value - min_delta) - lo)
    right = max(0.0, hi - (value + min_delta))
    if left + right <= 0:
        raise ConfigurationError(f"no room to move {value} by {min_delta} within [{lo}, {hi}]")
    u = rng.uniform(0.0, left + right)
    x = lo + u if u < left else value + min_delta + (u - left)
    return round(float(x), decimals)


def _hard_factors(spec: DistortionSpec, assets: AssetPool) -> list[str]:
    present = [f for f, on in spec.presence().items() if on]
    if "reverb" in present:
        rooms = {r for r in assets.rir_rooms.values() if r != spec.room_size}
        if not rooms:
            present.remove("reverb")
    return present


def perturb_intensity(rng: np.random.Generator, spec: DistortionSpec, factor: str,
                      assets: AssetPool) -> DistortionSpec:
    """Same condition with one factor moved to a materially different intensity."""
    if factor == "noise":
        return replace(spec, snr_db=_draw_away(rng, spec.snr_db, *TRAIN_SNR_RANGE, MIN_DELTA["snr_db"], 3))
    if factor == "bandlimit":
        return replace(spec, cutoff_hz=_draw_away(rng, spec.cutoff_hz, *CUTOFF_RANGE, MIN_DELTA["cutoff_hz"], 1))
    if factor == "clip":
        return replace(spec, clip_factor=_draw_away(rng, spec.clip_factor, *CLIP_RANGE, MIN_DELTA["clip_factor"], 4))
    if factor == "reverb":
        rooms = sorted({r for r in assets.rir_rooms.values() if r != spec.room_size})
        room = rooms[int(rng.integers(len(rooms)))]
        ids = assets.rir_ids(room)
        return replace(spec, room_size=room, rir_id=ids[int(rng.integers(len(ids)))])
    raise ValueError(f"unknown factor {factor!r}")


def make_quadruplet(rng: np.random.Generator, utterance_pool: Sequence[str], assets: AssetPool,
                    presence: Mapping[str, float] | None = None) -> Quadruplet:
    if len(utterance_pool) < 2:
        raise ConfigurationError(f"need at least 2 utterances, got {len(utterance_pool)}")
    for _ in range(1000):
        spec = sample_spec(rng, None, assets, presence)
        factors = _hard_factors(spec, assets)
        if factors:
            break
    else:
        raise ConfigurationError("could not draw a condition with a perturbable factor")
    ia, ip = rng.choice(len(utterance_pool), size=2, replace=False)
    u_a, u_p = utterance_pool[int(ia)], utterance_pool[int(ip)]
    factor = factors[int(rng.integers(len(factors)))]
    hard_spec = perturb_intensity(rng, spec, factor, assets)
    u_h = u_a if rng.random() < 0.5 else u_p
    return Quadruplet(Item(u_a, spec), Item(u_p, spec), Item(u_h, hard_spec), Item(u_a, CLEAN_SPEC))


def make_batch(rng: np.random.Generator, size: int, utterance_pool: Sequence[str], assets: AssetPool,
               presence: Mapping[str, float] | None = None) -> QuadBatch:
    if size < 2:
        raise ConfigurationError(f"batch size must be >= 2, got {size}")
    quads: list[Quadruplet] = []
    seen: set[str] = set()
    for _ in range(100 * size):
        q = make_quadruplet(rng, utterance_pool, assets, presence)
        if q.spec_id in seen:
            continue
        seen.add(q.spec_id)
        quads.append(q)
        if len(quads) == size:
            return QuadBatch(tuple(quads))
    raise ConfigurationError(f"could not assemble {size} quadruplets with distinct conditions")


def batch_from_pool(rng: np.random.Generator, size: int, pool: Sequence[Quadruplet]) -> QuadBatch:
    """Draw ``size`` quadruplets from a fixed pool, rejecting repeated conditions."""
    if size < 2:
        raise ConfigurationError(f"batch size must be >= 2, got {size}")
    quads: list[Quadruplet] = []
    seen: set[str] = set()
    for _ in range(100 * size):
        q = pool[int(rng.integers(len(pool)))]
        if q.spec_id in seen:
            continue
        seen.add(q.spec_id)
        quads.append(q)
        if len(quads) == size:
            return QuadBatch(tuple(quads))
    raise ConfigurationError(f"could not assemble {size} quadruplets with distinct conditions")


# --------------------------------------------------------------------------- validation

def _intensity_fields(spec: Mapping) -> dict:
    return {k: spec.get(k) for k in ("snr_db", "room_size", "rir_id", "cutoff_hz", "clip_factor")}


def validate_quadruplet_record(rec: Mapping) -> list[str]:
    """Re-derive every quadruplet invariant from a raw manifest record."""
    errs = []
    a, p, h, c = rec["anchor"], rec["positive"], rec["hard_negative"], rec["clean_ref"]
    try:
        specs = {k: DistortionSpec.from_dict(rec[k]["spec"])
                 for k in ("anchor", "positive", "hard_negative", "clean_ref")}
    except (ValueError, TypeError) as exc:
        return [f"malformed spec: {exc}"]
    if specs["anchor"] != specs["positive"] or a["spec"].get("spec_id") != p["spec"].get("spec_id"):
        errs.append("anchor and positive conditions differ")
    if a["utterance_id"] == p["utterance_id"]:
        errs.append("anchor and positive share an utterance")
    if h["utterance_id"] not in (a["utterance_id"], p["utterance_id"]):
        errs.append("hard negative utterance is neither anchor nor positive")
    if c["utterance_id"] != a["utterance_id"] or specs["clean_ref"] != CLEAN_SPEC:
        errs.append("clean reference is not the anchor's undistorted utterance")

    sa, sh = a["spec"], h["spec"]
    flags = lambda s: (s.get("noise_id") is not None, s.get("rir_id") is not None,
                       s.get("cutoff_hz") is not None, s.get("clip_factor") is not None)
    if flags(sa) != flags(sh):
        errs.append("hard negative changes the set of distortion types")
    if sa.get("noise_id") != sh.get("noise_id"):
        errs.append("hard negative changes the noise type")
    fa, fh = _intensity_fields(sa), _intensity_fields(sh)
    changed = {k for k in fa if fa[k] != fh[k]}
    if changed in ({"snr_db"}, {"cutoff_hz"}, {"clip_factor"}):
        (k,) = changed
        if abs(fa[k] - fh[k]) < MIN_DELTA[k] - _TOL:
            errs.append(f"hard negative {k} delta {abs(fa[k] - fh[k]):g} below {MIN_DELTA[k]:g}")
    elif changed in ({"room_size", "rir_id"}, {"room_size"}):
        if "rir_id" not in changed:
            errs.append("room size changed without a new RIR")
    else:
        errs.append(f"hard negative must change exactly one intensity, changed {sorted(changed) or 'none'}")
    return errs


def validate_batch_records(records: Sequence[Mapping]) -> list[str]:
    errs = []
    for i, rec in enumerate(records):
        errs += [f"quad {i}: {e}" for e in validate_quadruplet_record(rec)]
    ids = [rec["anchor"]["spec"].get("spec_id") for rec in records]
    if len(set(ids)) != len(ids):
        errs.append("batch contains repeated conditions")
    if len(records) < 2:
        errs.append("batch smaller than 2")
    return errs


def validate_manifest(path: str | os.PathLike) -> list[str]:
    """Validate a quadruplet manifest file; returns human-readable violations."""
    header, records = _read_lines(path)
    by_batch: dict[int, list] = {}
    for rec in records:
        by_batch.setdefault(rec.get("batch", 0), []).append(rec)
    errs = []
    for b in sorted(by_batch):
        errs += [f"batch {b}: {e}" for e in validate_batch_records(by_batch[b])]
    return errs


# --------------------------------------------------------------------------- manifest I/O

def write_quad_manifest(path: str | os.PathLike, batches: Sequence[QuadBatch], meta: Mapping) -> None:
    lines = [json.dumps({"kind": "quad_manifest", **meta}, sort_keys=True)]
    for b, batch in enumerate(batches):
        for q in batch.quads:
            lines.append(json.dumps({"batch": b, **q.to_dict()}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_lines(path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    if header.get("kind") != "quad_manifest":
        raise ConfigurationError(f"{path}: not a quadruplet manifest")
    return header, [json.loads(l) for l in lines[1:] if l.strip()]


def read_quad_manifest(path: str | os.PathLike) -> tuple[dict, list[Quadruplet]]:
    header, records = _read_lines(path)
    return header, [Quadruplet.from_dict(r) for r in records]
