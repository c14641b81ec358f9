"""Distortion conditions, asset pools, corpus manifests and the structured test subsets."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from . import dsp
from .audio import CANONICAL_RATE, AudioBuffer, read_wav, synth_utterance, write_wav
from .dsp import ROOM_SIZES

SNR_RANGE = (-5.0, 30.0)
TRAIN_SNR_RANGE = (-5.0, 20.0)
CUTOFF_RANGE = (1000.0, 8000.0)
CLIP_RANGE = (0.0, 0.5)

SUBSET_SNRS = (-5, 0, 5, 10, 15, 20)
SUBSET_CUTOFFS = (1000, 3000, 5000, 7000)
SUBSET_ROOMS = ("large", "medium", "small")

FACTORS = ("noise", "reverb", "bandlimit", "clip")


class SpecError(ValueError):
    pass


class AssetError(KeyError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DistortionSpec:
    noise_id: str | None = None
    snr_db: float | None = None
    rir_id: str | None = None
    room_size: str | None = None
    cutoff_hz: float | None = None
    clip_factor: float | None = None

    def __post_init__(self):
        if (self.noise_id is None) != (self.snr_db is None):
            raise SpecError("snr_db and noise_id must be given together")
        if self.snr_db is not None and not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise SpecError(f"snr_db {self.snr_db} outside {SNR_RANGE}")
        if self.room_size is not None and self.room_size not in ROOM_SIZES:
            raise SpecError(f"unknown room size {self.room_size!r}")
        if self.room_size is not None and self.rir_id is None:
            raise SpecError("room_size given without rir_id")
        if self.cutoff_hz is not None and not CUTOFF_RANGE[0] <= self.cutoff_hz <= CUTOFF_RANGE[1]:
            raise SpecError(f"cutoff_hz {self.cutoff_hz} outside {CUTOFF_RANGE}")
        if self.clip_factor is not None and not CLIP_RANGE[0] <= self.clip_factor <= CLIP_RANGE[1]:
            raise SpecError(f"clip_factor {self.clip_factor} outside {CLIP_RANGE}")

    @property
    def spec_id(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha1(canon.encode("utf-8")).hexdigest()[:16]

    def presence(self) -> dict[str, bool]:
        return {
            "noise": self.noise_id is not None,
            "reverb": self.rir_id is not None,
            "bandlimit": self.cutoff_hz is not None,
            "clip": self.clip_factor is not None,
        }

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["spec_id"] = self.spec_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DistortionSpec":
        names = {f.name for f in fields(cls)}
        spec = cls(**{k: v for k, v in d.items() if k in names})
        if "spec_id" in d and d["spec_id"] != spec.spec_id:
            raise SpecError(f"spec_id mismatch: stored {d['spec_id']}, computed {spec.spec_id}")
        return spec


CLEAN_SPEC = DistortionSpec()


# --------------------------------------------------------------------------- assets


def _synthetic_noise(seed: int, kind: str, n: int, rate: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x0015E])
    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    elif kind in ("pink", "brown"):
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1.0 / rate)
        f[0] = f[1]
        spec /= np.sqrt(f) if kind == "pink" else f
        x = np.fft.irfft(spec, n)
    elif kind == "babble":
        x = np.zeros(n)
        for k in range(6):
            x += synth_utterance(int(rng.integers(1 << 30)), n / rate, rate).samples
    elif kind == "hum":
        t = np.arange(n) / rate
        f0 = rng.choice([50.0, 60.0]) * rng.uniform(0.98, 1.02)
        x = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 6.3)) / k for k in range(1, 12))
        x = x + 0.1 * white
    elif kind == "band":
        lo = rng.uniform(300, 2500)
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1.0 / rate)
        spec *= np.exp(-0.5 * ((f - lo * 1.5) / (lo * 0.4)) ** 2)
        x = np.fft.irfft(spec, n)
    else:
        raise ValueError(kind)
    return 0.5 * x / np.max(np.abs(x))


NOISE_KINDS = ("white", "pink", "brown", "babble", "hum", "band")


@dataclass
class AssetPool:
    """Resolves noise and RIR identifiers to buffers."""

    noises: dict[str, AudioBuffer] = field(default_factory=dict)
    rirs: dict[str, AudioBuffer] = field(default_factory=dict)
    rir_rooms: dict[str, str] = field(default_factory=dict)

    def noise(self, noise_id: str) -> AudioBuffer:
        try:
            return self.noises[noise_id]
        except KeyError:
            raise AssetError(f"unknown noise id {noise_id!r}") from None

    def rir(self, rir_id: str) -> AudioBuffer:
        try:
            return self.rirs[rir_id]
        except KeyError:
            raise AssetError(f"unknown rir id {rir_id!r}") from None

    @property
    def noise_ids(self) -> list[str]:
        return sorted(self.noises)

    def rir_ids(self, room: str | None = None) -> list[str]:
        return sorted(k for k, r in self.rir_rooms.items() if room is None or r == room)

    @classmethod
    def synthetic(cls, seed: int, n_noise: int = 6, n_rir_per_room: int = 4,
                  sample_rate_hz: int = CANONICAL_RATE, noise_s: float = 6.0) -> "AssetPool":
        pool = cls()
        n = int(noise_s * sample_rate_hz)
        for i in range(n_noise):
            kind = NOISE_KINDS[i % len(NOISE_KINDS)]
            pool.noises[f"syn-noise-{i:03d}-{kind}"] = AudioBuffer(
                _synthetic_noise(seed * 1000 + i, kind, n, sample_rate_hz), sample_rate_hz)
        for room in ROOM_SIZES:
            for i in range(n_rir_per_room):
                rid = f"syn-rir-{room}-{i:03d}"
                pool.rirs[rid] = dsp.synth_rir(seed * 1000 + i, room, sample_rate_hz)
                pool.rir_rooms[rid] = room
        return pool

    def add_directories(self, noise_dirs: Iterable[str], rir_dirs: Mapping[str, str],
                        sample_rate_hz: int = CANONICAL_RATE) -> None:
        """Ingest real WAV assets, resampled to ``sample_rate_hz``."""
        for d in noise_dirs:
            if not os.path.isdir(d):
                raise ConfigurationError(f"noise directory not found: {d}")
            for p in sorted(Path(d).glob("*.wav")):
                self.noises[f"noise:{p.stem}"] = dsp.resample(read_wav(p), sample_rate_hz)
        for room, d in rir_dirs.items():
            if room not in ROOM_SIZES:
                raise ConfigurationError(f"unknown room size {room!r} for RIR directory {d}")
            if not os.path.isdir(d):
                raise ConfigurationError(f"RIR directory not found: {d}")
            for p in sorted(Path(d).glob("*.wav")):
                rid = f"rir:{room}:{p.stem}"
                self.rirs[rid] = dsp.resample(read_wav(p), sample_rate_hz)
                self.rir_rooms[rid] = room

    def write(self, root: str | os.PathLike) -> None:
        root = Path(root)
        (root / "noise").mkdir(parents=True, exist_ok=True)
        (root / "rir").mkdir(parents=True, exist_ok=True)
        index = {"noise": {}, "rir": {}}
        for nid in self.noise_ids:
            rel = f"noise/{_safe_name(nid)}.wav"
            write_wav(self.noises[nid], root / rel)
            index["noise"][nid] = rel
        for rid in self.rir_ids():
            rel = f"rir/{_safe_name(rid)}.wav"
            write_wav(self.rirs[rid], root / rel)
            index["rir"][rid] = {"path": rel, "room_size": self.rir_rooms[rid]}
        (root / "assets.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, root: str | os.PathLike) -> "AssetPool":
        root = Path(root)
        index_path = root / "assets.json"
        if not index_path.exists():
            raise ConfigurationError(f"asset index not found: {index_path}")
        index = json.loads(index_path.read_text())
        pool = cls()
        for nid, rel in index["noise"].items():
            pool.noises[nid] = read_wav(root / rel)
        for rid, rec in index["rir"].items():
            pool.rirs[rid] = read_wav(root / rec["path"])
            pool.rir_rooms[rid] = rec["room_size"]
        return pool


def _safe_name(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)


# --------------------------------------------------------------------------- rendering


@dataclass
class Rendering:
    """Final output plus what each stage saw, for verification."""

    output: AudioBuffer
    speech_part: np.ndarray | None = None
    noise_part: np.ndarray | None = None
    band_in: np.ndarray | None = None
    band_out: np.ndarray | None = None
    clip_in_peak: float | None = None

    def checks(self, spec: DistortionSpec) -> dict:
        out = {}
        if self.noise_part is not None:
            out["measured_snr_db"] = round(dsp.measure_snr(self.speech_part, self.noise_part), 6)
        if self.band_out is not None and 1.25 * spec.cutoff_hz < self.output.sample_rate_hz / 2:
            out["band_attenuation_db"] = round(
                dsp.attenuation_db(self.band_in, self.band_out, self.output.sample_rate_hz, 1.25 * spec.cutoff_hz), 3)
        if self.clip_in_peak is not None:
            out["clip_threshold"] = round((1.0 - spec.clip_factor) * self.clip_in_peak, 6)
            out["clip_peak"] = round(self.output.peak, 6)
        return out


def noise_offset(spec: DistortionSpec, noise_len: int, speech_len: int) -> int:
    """Crop position fixed by the condition, so equal specs share the same noise segment."""
    return int(spec.spec_id[:12], 16) % (noise_len - speech_len + 1)


def bandlimit(x: AudioBuffer, cutoff_hz: float) -> AudioBuffer:
    nyquist = x.sample_rate_hz / 2
    if cutoff_hz >= nyquist:
        return x
    if cutoff_hz >= nyquist / 2:
        return dsp.apply_fir(x, dsp.design_lowpass(cutoff_hz, x.sample_rate_hz))
    low_rate = 2 * int(math.ceil(cutoff_hz / 50.0) * 50)
    y = dsp.resample(dsp.resample(x, low_rate), x.sample_rate_hz).samples
    n = len(x)
    y = y[:n] if y.size >= n else np.pad(y, (0, n - y.size))
    # the round trip leaves upsampling images just above the cutoff; low-pass them away
    return dsp.apply_fir(x.with_samples(y), dsp.design_lowpass(cutoff_hz, x.sample_rate_hz))


def render(clean: AudioBuffer, spec: DistortionSpec, assets: AssetPool) -> Rendering:
    """Apply reverb, then noise, then bandlimiting, then clipping; absent stages are skipped."""
    x = clean
    trace = Rendering(output=clean)
    if spec.rir_id is not None:
        x = dsp.apply_rir(x, assets.rir(spec.rir_id))
    if spec.noise_id is not None:
        noise = assets.noise(spec.noise_id)
        if len(noise) < len(x):
            reps = -(-len(x) // len(noise))
            noise = noise.with_samples(np.tile(noise.samples, reps))
        offset = noise_offset(spec, len(noise), len(x))
        s_part, n_part = dsp.mix_components(x, noise, spec.snr_db, offset=offset)
        trace.speech_part, trace.noise_part = s_part, n_part
        x = x.with_samples(s_part + n_part)
    if spec.cutoff_hz is not None:
        y = bandlimit(x, spec.cutoff_hz)
        trace.band_in, trace.band_out = x.samples, y.samples
        x = y
    if spec.clip_factor is not None:
        trace.clip_in_peak = x.peak
        x = dsp.clip_amplitude(x, spec.clip_factor)
    trace.output = x
    return trace


def apply_spec(clean: AudioBuffer, spec: DistortionSpec, assets: AssetPool) -> AudioBuffer:
    return render(clean, spec, assets).output


# --------------------------------------------------------------------------- sampling

_FREE = object()


def sample_spec(rng: np.random.Generator, constraints: Mapping | None, assets: AssetPool,
                presence: Mapping[str, float] | None = None) -> DistortionSpec:
    """Draw a condition, copying any field named in ``constraints``.

    A constraint value of ``None`` forces that field absent. ``presence`` gives
    per-factor inclusion probabilities for unconstrained factors (default: all
    factors always present).
    """
    c = dict(constraints or {})
    presence = presence or {}

    def include(factor: str) -> bool:
        p = presence.get(factor, 1.0)
        return p >= 1.0 or rng.random() < p

    out = {}
    # noise
    if "noise_id" in c or "snr_db" in c:
        out["noise_id"] = c.get("noise_id", _FREE)
        out["snr_db"] = c.get("snr_db", _FREE)
        if out["noise_id"] is None or out["snr_db"] is None:
            out["noise_id"] = out["snr_db"] = None
    elif include("noise"):
        out["noise_id"] = out["snr_db"] = _FREE
    if out.get("noise_id") is _FREE:
        if not assets.noise_ids:
            raise ConfigurationError("noise pool is empty")
        out["noise_id"] = assets.noise_ids[int(rng.integers(len(assets.noise_ids)))]
    if out.get("snr_db") is _FREE:
        out["snr_db"] = round(float(rng.uniform(*TRAIN_SNR_RANGE)), 3)

    # reverb
    if "rir_id" in c:
        out["rir_id"] = c["rir_id"]
        if c["rir_id"] is not None:
            out["room_size"] = c.get("room_size", assets.rir_rooms.get(c["rir_id"]))
    elif "room_size" in c:
        if c["room_size"] is not None:
            ids = assets.rir_ids(c["room_size"])
            if not ids:
                raise ConfigurationError(f"no RIRs for room size {c['room_size']!r}")
            out["rir_id"] = ids[int(rng.integers(len(ids)))]
            out["room_size"] = c["room_size"]
    elif include("reverb"):
        ids = assets.rir_ids()
        if not ids:
            raise ConfigurationError("RIR pool is empty")
        out["rir_id"] = ids[int(rng.integers(len(ids)))]
        out["room_size"] = assets.rir_rooms[out["rir_id"]]

    if "cutoff_hz" in c:
        out["cutoff_hz"] = c["cutoff_hz"]
    elif include("bandlimit"):
        out["cutoff_hz"] = round(float(rng.uniform(*CUTOFF_RANGE)), 1)

    if "clip_factor" in c:
        out["clip_factor"] = c["clip_factor"]
    elif include("clip"):
        out["clip_factor"] = round(float(rng.uniform(*CLIP_RANGE)), 4)

    return DistortionSpec(**{k: v for k, v in out.items() if v is not None})


# --------------------------------------------------------------------------- manifests


@dataclass
class ManifestEntry:
    utterance_id: str
    clean_path: str
    degraded_path: str
    spec: DistortionSpec
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"utterance_id": self.utterance_id, "clean_path": self.clean_path,
             "degraded_path": self.degraded_path, "spec": self.spec.to_dict()}
        if self.checks:
            d["checks"] = self.checks
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManifestEntry":
        return cls(d["utterance_id"], d["clean_path"], d["degraded_path"],
                   DistortionSpec.from_dict(d["spec"]), dict(d.get("checks", {})))


@dataclass
class CorpusManifest:
    name: str
    seed: int
    sample_rate_hz: int
    entries: list[ManifestEntry] = field(default_factory=list)
    controlled: dict = field(default_factory=dict)

    def validate(self) -> None:
        seen = set()
        for e in self.entries:
            key = (e.utterance_id, e.spec.spec_id)
            if key in seen:
                raise ConfigurationError(f"duplicate entry {key} in manifest {self.name}")
            seen.add(key)

    def dumps(self) -> str:
        header = {"kind": "corpus_manifest", "name": self.name, "seed": self.seed,
                  "sample_rate_hz": self.sample_rate_hz}
        if self.controlled:
            header["controlled"] = self.controlled
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(e.to_dict(), sort_keys=True) for e in self.entries]
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "CorpusManifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        if header.get("kind") != "corpus_manifest":
            raise ConfigurationError(f"{path}: not a corpus manifest")
        return cls(header["name"], header["seed"], header["sample_rate_hz"],
                   [ManifestEntry.from_dict(json.loads(l)) for l in lines[1:] if l.strip()],
                   header.get("controlled", {}))


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    clean_path: str


def subset_grid() -> list[tuple[str, dict]]:
    """The 13 (name, constraint) pairs of the structured evaluation grid."""
    grid = [(f"snr_{s}", {"snr_db": float(s)}) for s in SUBSET_SNRS]
    grid += [(f"cutoff_{c}", {"cutoff_hz": float(c)}) for c in SUBSET_CUTOFFS]
    grid += [(f"room_{r}", {"room_size": r}) for r in SUBSET_ROOMS]
    return grid


def build_subsets(clean_pool: list[Utterance], assets: AssetPool, seed: int, per_subset: int,
                  sample_rate_hz: int = CANONICAL_RATE) -> list[CorpusManifest]:
    if per_subset < 1:
        raise ConfigurationError(f"per_subset must be >= 1, got {per_subset}")
    if not clean_pool:
        raise ConfigurationError("clean pool is empty")
    manifests = []
    for k, (name, constraint) in enumerate(subset_grid()):
        rng = np.random.default_rng([seed, 0x5B5E7, k])
        order = rng.permutation(len(clean_pool))
        m = CorpusManifest(name, seed, sample_rate_hz, controlled=dict(constraint))
        seen = set()
        i = 0
        while len(m.entries) < per_subset:
            utt = clean_pool[order[i % len(order)]]
            i += 1
            spec = sample_spec(rng, constraint, assets)
            if (utt.utterance_id, spec.spec_id) in seen:
                continue
            seen.add((utt.utterance_id, spec.spec_id))
            m.entries.append(ManifestEntry(
                utt.utterance_id, utt.clean_path,
                f"subsets/{name}/{utt.utterance_id}__{spec.spec_id}.wav", spec))
        manifests.append(m)
    return manifests


def build_training_corpus(clean_pool: list[Utterance], assets: AssetPool, seed: int,
                          specs_per_utterance: int, sample_rate_hz: int = CANONICAL_RATE) -> CorpusManifest:
    rng = np.random.default_rng([seed, 0x7A1])
    m = CorpusManifest("train", seed, sample_rate_hz)
    for utt in clean_pool:
        for _ in range(specs_per_utterance):
            spec = sample_spec(rng, None, assets)
            m.entries.append(ManifestEntry(utt.utterance_id, utt.clean_path,
                                           f"train/{utt.utterance_id}__{spec.spec_id}.wav", spec))
    return m


_WORKER_ASSETS: AssetPool | None = None


def use_assets(assets: AssetPool) -> None:
    """Install the asset pool that worker-side rendering resolves ids against."""
    global _WORKER_ASSETS
    _WORKER_ASSETS = assets


def _render_entry(args) -> tuple[np.ndarray, dict]:
    clean_root, entry = args
    clean = read_wav(Path(clean_root) / entry.clean_path)
    r = render(clean, entry.spec, _WORKER_ASSETS)
    return r.output.samples, r.checks(entry.spec)


def materialize(manifest: CorpusManifest, root: str | os.PathLike, assets: AssetPool,
                map_fn: Callable = map) -> CorpusManifest:
    """Render every entry to ``root/degraded_path`` and record its verification checks.

    ``map_fn`` must preserve order; worker processes are expected to have
    called :func:`use_assets` with an equivalent pool.
    """
    root = Path(root)
    manifest.validate()
    use_assets(assets)
    work = [(str(root), e) for e in manifest.entries]
    for entry, (samples, checks) in zip(manifest.entries, map_fn(_render_entry, work)):
        out_path = root / entry.degraded_path
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(AudioBuffer(samples, manifest.sample_rate_hz), out_path)
        entry.checks = checks
    return manifest
