"""Adam training of the projection head over precomputed frozen-encoder embeddings."""

from __future__ import annotations

import csv
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..quadruplet import Quadruplet, QuadBatch, batch_from_pool
from . import head
from .head import PARAM_NAMES, AcxHeadParams
from .losses import LossBreakdown, loss_total

log = logging.getLogger(__name__)

CKPT_MAGIC = b"ACXC"
CKPT_VERSION = 1
METRIC_COLUMNS = ("step", "l_c", "l_d", "l_nd", "l_nc", "total", "p_max")


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path


class CheckpointError(ValueError):
    pass


class FrozenEncoderViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 512
    dim_out: int = 1024
    normalize_output: bool = True
    seed: int = 0
    checkpoint_every: int = 250

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "TrainConfig":
        return cls(**dict(d or {}))


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainState:
    params: AcxHeadParams
    adam: Adam
    step: int
    rng: np.random.Generator
    meta: dict


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | os.PathLike, state: TrainState) -> None:
    """Versioned binary: header, JSON metadata (shapes, step, RNG state), then float64 arrays."""
    arrays = state.params.arrays()
    meta = dict(state.meta)
    meta.update({
        "step": state.step,
        "adam_t": state.adam.t,
        "normalize_output": state.params.normalize_output,
        "shapes": {k: list(a.shape) for k, a in arrays.items()},
        "has_moments": bool(state.adam.m),
        "rng_state": state.rng.bit_generator.state,
    })
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob]
    for name in PARAM_NAMES:
        parts.append(arrays[name].astype("<f8").tobytes())
    if state.adam.m:
        for name in PARAM_NAMES:
            parts.append(state.adam.m[name].astype("<f8").tobytes())
        for name in PARAM_NAMES:
            parts.append(state.adam.v[name].astype("<f8").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> TrainState:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    version, n = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(data[12:12 + n].decode("utf-8"))
    pos = 12 + n

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * count
        return arr

    shapes = meta.pop("shapes")
    arrays = {name: take(shapes[name]) for name in PARAM_NAMES}
    params = AcxHeadParams(**arrays, normalize_output=meta.pop("normalize_output"))
    cfg = meta.get("train_config", {})
    adam = Adam(cfg.get("lr", 1e-3), cfg.get("beta1", 0.9), cfg.get("beta2", 0.999), cfg.get("eps", 1e-8))
    adam.t = meta.pop("adam_t")
    if meta.pop("has_moments"):
        adam.m = {name: take(shapes[name]) for name in PARAM_NAMES}
        adam.v = {name: take(shapes[name]) for name in PARAM_NAMES}
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} unexpected trailing bytes")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta.pop("rng_state")
    step = meta.pop("step")
    return TrainState(params, adam, step, rng, meta)


# --------------------------------------------------------------------------- training

def batch_inputs(batch: QuadBatch, embeddings: Mapping[str, np.ndarray]) -> np.ndarray:
    """Stacked encoder rows ``[anchors; positives; hard negatives]``."""
    rows = [embeddings[q.anchor.item_id] for q in batch.quads]
    rows += [embeddings[q.positive.item_id] for q in batch.quads]
    rows += [embeddings[q.hard_negative.item_id] for q in batch.quads]
    return np.vstack(rows)


def train_step(params: AcxHeadParams, emb: np.ndarray) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    z, cache = head.forward(params, emb)
    breakdown, gz = loss_total(z, need_grad=True)
    return breakdown, head.backward(params, cache, gz)


def _dump_batch(path: Path, step: int, batch: QuadBatch, emb: np.ndarray, breakdown: LossBreakdown) -> None:
    path.write_text(json.dumps({
        "step": step,
        "losses": breakdown.as_row(),
        "items": [[q.anchor.item_id, q.positive.item_id, q.hard_negative.item_id] for q in batch.quads],
        "inputs": emb.tolist(),
    }, indent=1))


def _rewrite_metrics(path: Path, upto_step: int) -> None:
    rows = []
    if path.exists():
        with path.open(newline="") as f:
            rows = [r for r in csv.DictReader(f) if int(r["step"]) <= upto_step]
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def train(config: TrainConfig, quads: Sequence[Quadruplet], embeddings: Mapping[str, np.ndarray],
          out_dir: str | os.PathLike, encoder_checksum: Callable[[], str] | None = None,
          resume: str | os.PathLike | None = None) -> TrainState:
    """Run ``config.steps`` Adam steps, logging every step and checkpointing periodically.

    The checkpoint at ``out_dir/checkpoint.acxc`` always holds the latest
    state; resuming from any checkpoint reproduces the uninterrupted run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    ckpt_path = out / "checkpoint.acxc"
    checksum0 = encoder_checksum() if encoder_checksum else None

    if resume is not None:
        state = load_checkpoint(resume)
        if checksum0 is not None and state.meta.get("encoder_checksum") not in (None, checksum0):
            raise FrozenEncoderViolation("encoder differs from the one the checkpoint was trained against")
        _rewrite_metrics(metrics_path, state.step)
    else:
        dim_in = len(next(iter(embeddings.values())))
        params = AcxHeadParams.init(dim_in, config.hidden, config.dim_out, config.seed, config.normalize_output)
        state = TrainState(params, Adam(config.lr, config.beta1, config.beta2, config.eps), 0,
                           np.random.default_rng([config.seed, 0x7EA1]), {})
        _rewrite_metrics(metrics_path, -1)
    state.meta["train_config"] = asdict(config)
    state.meta["encoder_checksum"] = checksum0

    with metrics_path.open("a", newline="") as f:
        writer = csv.DictWriter(f, METRIC_COLUMNS, lineterminator="\n")
        while state.step < config.steps:
            batch = batch_from_pool(state.rng, config.batch_size, quads)
            emb = batch_inputs(batch, embeddings)
            breakdown, grads = train_step(state.params, emb)
            if not np.isfinite(breakdown.total):
                dump = out / f"nonfinite_step{state.step + 1}.json"
                _dump_batch(dump, state.step + 1, batch, emb, breakdown)
                raise NonFiniteLossError(f"non-finite loss at step {state.step + 1}", str(dump))
            state.adam.step(state.params.arrays(), grads)
            state.step += 1
            writer.writerow({"step": state.step, **breakdown.as_row()})
            if state.step % config.checkpoint_every == 0 or state.step == config.steps:
                f.flush()
                save_checkpoint(ckpt_path, state)
            if state.step % 100 == 0:
                log.info("step %d total %.4f", state.step, breakdown.total)

    if encoder_checksum is not None and encoder_checksum() != checksum0:
        raise FrozenEncoderViolation("encoder parameters changed during training")
    return state


def read_metrics(path: str | os.PathLike) -> list[dict[str, float]]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(f)]


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    window = max(1, min(window, v.size))
    return np.convolve(v, np.ones(window) / window, mode="valid")
