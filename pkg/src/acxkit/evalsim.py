"""Similarity sweeps across distortion intensity: anchor vs positive and anchor vs its clean source."""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .acx import head
from .acx.head import AcxHeadParams
from .acx.losses import cos_sim
from .audio import AudioBuffer, read_wav
from .encoder import EncoderConfig, MelStatEncoder
from .scenario import AssetPool, ConfigurationError, DistortionSpec, Utterance, apply_spec

NOISE_AXIS = tuple(range(0, 31))
ROOM_AXIS = ("large", "medium", "small")
BANDWIDTH_AXIS = tuple(range(1000, 8001, 1000))


@dataclass
class SweepResult:
    kind: str
    axis: list
    mean_sim_positive: list[float]
    mean_sim_clean: list[float]
    n_per_point: int
    representation_tag: str

    def __post_init__(self):
        if not (len(self.axis) == len(self.mean_sim_positive) == len(self.mean_sim_clean)):
            raise ValueError("sweep columns must have equal length")

    def spearman_clean(self, axis_values: Sequence[float] | None = None) -> float:
        """Rank correlation between intensity (mild = high) and anchor-vs-clean similarity."""
        x = axis_values if axis_values is not None else _numeric_axis(self.axis)
        return float(stats.spearmanr(x, self.mean_sim_clean).statistic)

    def clean_drop(self) -> float:
        """Anchor-vs-clean similarity at the mildest point minus at the harshest point."""
        return self.mean_sim_clean[-1] - self.mean_sim_clean[0]


def _numeric_axis(axis) -> list[float]:
    return [ROOM_AXIS.index(a) if isinstance(a, str) else float(a) for a in axis]


class Representation:
    """Frozen encoder, optionally followed by a trained head."""

    def __init__(self, encoder: MelStatEncoder, params: AcxHeadParams | None = None):
        self.encoder = encoder
        self.params = params

    @property
    def tag(self) -> str:
        return "raw-encoder" if self.params is None else "trained-head"

    def project(self, rows: np.ndarray) -> np.ndarray:
        if self.params is None:
            return rows
        return head.forward(self.params, rows)[0]


def sweep_spec(kind: str, value, rng: np.random.Generator, assets: AssetPool) -> DistortionSpec:
    """A condition with only the swept factor applied."""
    if kind == "noise":
        ids = assets.noise_ids
        return DistortionSpec(noise_id=ids[int(rng.integers(len(ids)))], snr_db=float(value))
    if kind == "reverb":
        ids = assets.rir_ids(value)
        if not ids:
            raise ConfigurationError(f"no RIRs of room size {value!r}")
        return DistortionSpec(rir_id=ids[int(rng.integers(len(ids)))], room_size=value)
    if kind == "bandwidth":
        return DistortionSpec(cutoff_hz=float(value))
    raise ValueError(f"unknown sweep kind {kind!r}")


AXES = {"noise": NOISE_AXIS, "reverb": ROOM_AXIS, "bandwidth": BANDWIDTH_AXIS}


def plan_sweep(kind: str, pool: Sequence[Utterance], assets: AssetPool, seed: int,
               n_per_point: int) -> list[tuple[int, Utterance, Utterance, DistortionSpec]]:
    """(point index, anchor utterance, positive utterance, condition) per item, in fixed order."""
    if len(pool) < 2:
        raise ConfigurationError("a sweep needs at least two clean utterances")
    if n_per_point < 1:
        raise ConfigurationError("n_per_point must be >= 1")
    plan = []
    for k, value in enumerate(AXES[kind]):
        rng = np.random.default_rng([seed, 0x5EE9, list(AXES).index(kind), k])
        for _ in range(n_per_point):
            ia, ip = rng.choice(len(pool), size=2, replace=False)
            plan.append((k, pool[int(ia)], pool[int(ip)], sweep_spec(kind, value, rng, assets)))
    return plan


_WORKER: dict = {}


def init_worker(clean_root: str, assets_root: str | None, encoder_config: dict,
                assets: AssetPool | None = None) -> None:
    """Set up per-process state for :func:`encode_triple`."""
    _WORKER["clean_root"] = Path(clean_root)
    _WORKER["assets"] = assets if assets is not None else AssetPool.load(assets_root)
    _WORKER["encoder"] = MelStatEncoder(EncoderConfig.from_dict(encoder_config))
    _WORKER["clean_cache"] = {}


def _clean(utt: Utterance) -> AudioBuffer:
    cache = _WORKER["clean_cache"]
    if utt.utterance_id not in cache:
        cache[utt.utterance_id] = read_wav(_WORKER["clean_root"] / utt.clean_path)
    return cache[utt.utterance_id]


def encode_triple(item) -> np.ndarray:
    """Encoder rows for (anchor, positive, clean anchor)."""
    _, ua, up, spec = item
    enc, assets = _WORKER["encoder"], _WORKER["assets"]
    ca, cp = _clean(ua), _clean(up)
    return np.vstack([enc(apply_spec(ca, spec, assets)), enc(apply_spec(cp, spec, assets)), enc(ca)])


def encode_plan(plan, map_fn: Callable = map) -> np.ndarray:
    """Shape (items, 3, dim) encoder outputs; ``map_fn`` must run :func:`encode_triple` in initialized workers."""
    return np.stack(list(map_fn(encode_triple, plan)))


def summarize(kind: str, plan, encoded: np.ndarray, rep: Representation, n_per_point: int) -> SweepResult:
    n_items, _, dim = encoded.shape
    projected = rep.project(encoded.reshape(-1, dim)).reshape(n_items, 3, -1)
    sims = np.array([[cos_sim(p[0], p[1]), cos_sim(p[0], p[2])] for p in projected])
    points = np.array([k for k, *_ in plan])
    axis = list(AXES[kind])
    pos, cln = [], []
    for k in range(len(axis)):
        sel = sims[points == k]
        if sel.shape[0] == 0:
            raise ConfigurationError(f"no items for sweep point {axis[k]}")
        pos.append(float(np.mean(sel[:, 0])))
        cln.append(float(np.mean(sel[:, 1])))
    return SweepResult(kind, axis, pos, cln, n_per_point, rep.tag)


def run_sweep(kind: str, rep: Representation, pool: Sequence[Utterance], clean_root: str | os.PathLike,
              assets: AssetPool, seed: int, n_per_point: int) -> SweepResult:
    """Single-process sweep; the CLI distributes :func:`encode_triple` over workers instead."""
    plan = plan_sweep(kind, pool, assets, seed, n_per_point)
    init_worker(str(clean_root), None, asdict(rep.encoder.config), assets=assets)
    return summarize(kind, plan, encode_plan(plan), rep, n_per_point)


def run_noise_sweep(rep, pool, clean_root, assets, seed, n_per_point) -> SweepResult:
    return run_sweep("noise", rep, pool, clean_root, assets, seed, n_per_point)


def run_reverb_sweep(rep, pool, clean_root, assets, seed, n_per_point) -> SweepResult:
    return run_sweep("reverb", rep, pool, clean_root, assets, seed, n_per_point)


def run_bandwidth_sweep(rep, pool, clean_root, assets, seed, n_per_point) -> SweepResult:
    return run_sweep("bandwidth", rep, pool, clean_root, assets, seed, n_per_point)


def emit_csv(result: SweepResult, path: str | os.PathLike) -> None:
    if not result.axis:
        raise ValueError("refusing to write an empty sweep")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis", "mean_sim_positive", "mean_sim_clean", "n"])
        for a, p, c in zip(result.axis, result.mean_sim_positive, result.mean_sim_clean):
            w.writerow([a, f"{p:.9g}", f"{c:.9g}", result.n_per_point])


def read_csv(path: str | os.PathLike, kind: str = "", tag: str = "") -> SweepResult:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    axis = [r["axis"] if r["axis"] in ROOM_AXIS else float(r["axis"]) for r in rows]
    return SweepResult(kind, axis, [float(r["mean_sim_positive"]) for r in rows],
                       [float(r["mean_sim_clean"]) for r in rows], int(rows[0]["n"]) if rows else 0, tag)
