"""Implementations behind the ``acx`` subcommands.

Every command reads and writes inside the run directory (``paths.out``)::

    clean.jsonl, clean/          clean utterances (train and test splits)
    assets/                      noise and RIR WAVs plus assets.json
    corpus/train.jsonl, train/   randomly degraded training corpus
    subsets/*.jsonl, subsets/*/  the 13 fixed-intensity test subsets
    quads.jsonl                  quadruplet manifest
    embeddings.acxe              frozen-encoder embeddings of all quadruplet items
    model/                       checkpoint.acxc, metrics.csv
    eval/                        similarity sweep CSVs
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evalsim
from .acx import gradcheck
from .acx.train import NonFiniteLossError, load_checkpoint, train
from .audio import AudioBuffer, read_wav, synth_utterance, write_wav
from .config import RunConfig
from .encoder import MelStatEncoder, EncoderConfig, load_embeddings, save_embeddings
from .parallel import worker_map
from .quadruplet import Item, make_batch, read_quad_manifest, validate_manifest, write_quad_manifest
from .scenario import (
    CLEAN_SPEC,
    AssetPool,
    ConfigurationError,
    CorpusManifest,
    DistortionSpec,
    Utterance,
    apply_spec,
    build_subsets,
    build_training_corpus,
    materialize,
    use_assets,
)

log = logging.getLogger(__name__)

SNR_TOL_DB = 0.01
MIN_ATTENUATION_DB = 40.0
CLIP_TOL = 1e-3


class VerificationFailed(RuntimeError):
    """A command ran but its own verification did not pass (exit code 1)."""


# --------------------------------------------------------------------------- helpers

def _utterance_seed(seed: int, split: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, split, i]).generate_state(1)[0])


def read_clean_corpus(out: Path, split: str | None = None) -> list[Utterance]:
    path = out / "clean.jsonl"
    if not path.exists():
        raise ConfigurationError(f"clean corpus not found: {path} (run `acx synth` first)")
    lines = path.read_text(encoding="utf-8").splitlines()[1:]
    rows = [json.loads(l) for l in lines if l.strip()]
    return [Utterance(r["utterance_id"], r["clean_path"]) for r in rows if split is None or r["split"] == split]


def load_assets(out: Path) -> AssetPool:
    return AssetPool.load(out / "assets")


_STATE: dict = {}


def _init_render_worker(out: str, encoder_config: dict | None = None) -> None:
    assets = load_assets(Path(out))
    use_assets(assets)
    _STATE.clear()
    _STATE.update(out=Path(out), assets=assets, cache={},
                  clean={u.utterance_id: u.clean_path for u in read_clean_corpus(Path(out))})
    if encoder_config is not None:
        _STATE["encoder"] = MelStatEncoder(EncoderConfig(**encoder_config))


def _clean_audio(utterance_id: str) -> AudioBuffer:
    cache = _STATE["cache"]
    if utterance_id not in cache:
        cache[utterance_id] = read_wav(_STATE["out"] / _STATE["clean"][utterance_id])
    return cache[utterance_id]


def _embed_item(task) -> tuple[str, np.ndarray | None, str | None]:
    item_id, utterance_id, spec_dict, wav_path = task
    try:
        if wav_path is not None:
            audio = read_wav(_STATE["out"] / wav_path)
        else:
            spec = DistortionSpec.from_dict(spec_dict)
            audio = apply_spec(_clean_audio(utterance_id), spec, _STATE["assets"])
        return item_id, _STATE["encoder"](audio), None
    except Exception as exc:  # reported per item, command exits nonzero
        return item_id, None, f"{type(exc).__name__}: {exc}"


def _summarize_checks(m: CorpusManifest) -> tuple[dict, list[str]]:
    errs = []
    snr_err = [abs(e.checks["measured_snr_db"] - e.spec.snr_db) for e in m.entries if "measured_snr_db" in e.checks]
    atten = [e.checks["band_attenuation_db"] for e in m.entries if "band_attenuation_db" in e.checks]
    clip_err = [abs(e.checks["clip_peak"] - e.checks["clip_threshold"]) for e in m.entries if "clip_peak" in e.checks]
    summary = {
        "entries": len(m.entries),
        "controlled": m.controlled,
        "snr_max_err_db": max(snr_err) if snr_err else None,
        "band_min_atten_db": min(atten) if atten else None,
        "clip_max_err": max(clip_err) if clip_err else None,
    }
    if snr_err and max(snr_err) > SNR_TOL_DB:
        errs.append(f"{m.name}: SNR error {max(snr_err):.4f} dB exceeds {SNR_TOL_DB}")
    if atten and min(atten) < MIN_ATTENUATION_DB:
        errs.append(f"{m.name}: band attenuation {min(atten):.1f} dB below {MIN_ATTENUATION_DB}")
    if clip_err and max(clip_err) > CLIP_TOL:
        errs.append(f"{m.name}: clip peak error {max(clip_err):.2e} exceeds {CLIP_TOL}")
    for key, value in m.controlled.items():
        if any(getattr(e.spec, key) != value for e in m.entries):
            errs.append(f"{m.name}: controlled factor {key} not constant")
    return summary, errs


def _fmt(v, spec=".4g"):
    return "-" if v is None else format(v, spec)


# --------------------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, jobs: int = 1) -> list[Path]:
    out = cfg.out
    for d in cfg.paths.noise_dirs:
        if not Path(d).is_dir():
            raise ConfigurationError(f"noise directory not found: {d}")
    for d in cfg.paths.rir_dirs.values():
        if not Path(d).is_dir():
            raise ConfigurationError(f"RIR directory not found: {d}")
    out.mkdir(parents=True, exist_ok=True)
    rate = cfg.sample_rate_hz
    c = cfg.corpus

    assets = AssetPool.synthetic(cfg.seed, c.synthetic_noises, c.synthetic_rirs_per_room, rate)
    assets.add_directories(cfg.paths.noise_dirs, cfg.paths.rir_dirs, rate)
    assets.write(out / "assets")
    assets = load_assets(out)

    (out / "clean").mkdir(exist_ok=True)
    rows = [{"kind": "clean_corpus", "seed": cfg.seed, "sample_rate_hz": rate, "utterance_s": c.utterance_s}]
    for split_idx, (split, n) in enumerate((("train", c.n_train), ("test", c.n_test))):
        for i in range(n):
            uid = f"{split}-{i:04d}"
            rel = f"clean/{uid}.wav"
            write_wav(synth_utterance(_utterance_seed(cfg.seed, split_idx, i), c.utterance_s, rate), out / rel)
            rows.append({"utterance_id": uid, "clean_path": rel, "split": split})
    (out / "clean.jsonl").write_text("\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n")

    train_pool = read_clean_corpus(out, "train")
    test_pool = read_clean_corpus(out, "test")
    written = []
    errors = []
    with worker_map(jobs, _init_render_worker, (str(out),)) as map_fn:
        corpus = build_training_corpus(train_pool, assets, cfg.seed, c.specs_per_utterance, rate)
        materialize(corpus, out, assets, map_fn)
        (out / "corpus").mkdir(exist_ok=True)
        corpus.write(out / "corpus" / "train.jsonl")
        written.append(out / "corpus" / "train.jsonl")
        _, errs = _summarize_checks(corpus)
        errors += errs

        (out / "subsets").mkdir(exist_ok=True)
        print(f"{'subset':<14}{'n':>5}  {'snr err dB':>10}  {'min atten dB':>12}  {'clip err':>9}")
        for m in build_subsets(test_pool, assets, cfg.seed, c.per_subset, rate):
            materialize(m, out, assets, map_fn)
            path = out / "subsets" / f"{m.name}.jsonl"
            m.write(path)
            written.append(path)
            summary, errs = _summarize_checks(m)
            errors += errs
            print(f"{m.name:<14}{summary['entries']:>5}  {_fmt(summary['snr_max_err_db'], '.2e'):>10}  "
                  f"{_fmt(summary['band_min_atten_db'], '.1f'):>12}  {_fmt(summary['clip_max_err'], '.1e'):>9}")
    print(f"{len(written) - 1} subsets written")
    for p in written:
        print(p)
    if errors:
        raise VerificationFailed("; ".join(errors))
    return written


def cmd_quads(cfg: RunConfig) -> Path:
    out = cfg.out
    pool = [u.utterance_id for u in read_clean_corpus(out, "train")]
    assets = load_assets(out)
    rng = np.random.default_rng([cfg.seed, 0x9AD5])
    presence = {f: cfg.quads.presence for f in ("noise", "reverb", "bandlimit", "clip")}
    batches = [make_batch(rng, cfg.quads.batch_size, pool, assets, presence) for _ in range(cfg.quads.n_batches)]
    path = out / "quads.jsonl"
    write_quad_manifest(path, batches, {"seed": cfg.seed, "batch_size": cfg.quads.batch_size,
                                        "presence": cfg.quads.presence})
    violations = validate_manifest(path)
    print(f"{sum(len(b) for b in batches)} quadruplets in {len(batches)} batches -> {path}")
    print(f"validator violations: {len(violations)}")
    for v in violations[:20]:
        print(f"  {v}")
    if violations:
        raise VerificationFailed(f"{len(violations)} quadruplet invariant violations")
    return path


def embed_tasks(manifest: Path) -> list[tuple]:
    """(item_id, utterance_id, spec dict, wav path or None) for every distinct manifest item."""
    head = json.loads(manifest.read_text(encoding="utf-8").splitlines()[0])
    tasks: dict[str, tuple] = {}
    if head.get("kind") == "quad_manifest":
        _, quads = read_quad_manifest(manifest)
        for q in quads:
            for it in q.items():
                tasks.setdefault(it.item_id, (it.item_id, it.utterance_id, it.spec.to_dict(), None))
    elif head.get("kind") == "corpus_manifest":
        m = CorpusManifest.read(manifest)
        for e in m.entries:
            deg = Item(e.utterance_id, e.spec)
            tasks.setdefault(deg.item_id, (deg.item_id, e.utterance_id, e.spec.to_dict(), e.degraded_path))
            clean = Item(e.utterance_id, CLEAN_SPEC)
            tasks.setdefault(clean.item_id, (clean.item_id, e.utterance_id, {}, e.clean_path))
    else:
        raise ConfigurationError(f"{manifest}: unrecognised manifest kind {head.get('kind')!r}")
    return list(tasks.values())


def cmd_embed(cfg: RunConfig, manifest: str | None = None, jobs: int = 1) -> Path:
    out = cfg.out
    manifest_path = Path(manifest) if manifest else out / "quads.jsonl"
    if not manifest_path.exists():
        raise ConfigurationError(f"manifest not found: {manifest_path}")
    enc_cfg = cfg.encoder_config()
    tasks = embed_tasks(manifest_path)
    embeddings = {}
    failures = []
    with worker_map(jobs, _init_render_worker, (str(out), asdict(enc_cfg))) as map_fn:
        for item_id, vec, err in map_fn(_embed_item, tasks):
            if err is not None:
                failures.append(f"{item_id}: {err}")
            else:
                embeddings[item_id] = vec
    if failures:
        for f in failures:
            print(f"unreadable item {f}")
        raise ConfigurationError(f"{len(failures)} items could not be embedded")
    path = out / ("embeddings.acxe" if manifest is None else f"{manifest_path.stem}.acxe")
    save_embeddings(path, embeddings, enc_cfg.dim)
    print(f"{len(embeddings)} embeddings (dim {enc_cfg.dim}) -> {path}")
    return path


def cmd_train(cfg: RunConfig, resume: str | None = None, embeddings: str | None = None) -> Path:
    out = cfg.out
    quads_path = out / "quads.jsonl"
    emb_path = Path(embeddings) if embeddings else out / "embeddings.acxe"
    for p in (quads_path, emb_path):
        if not p.exists():
            raise ConfigurationError(f"missing input: {p}")
    _, quads = read_quad_manifest(quads_path)
    emb = load_embeddings(emb_path)
    missing = [it.item_id for q in quads for it in (q.anchor, q.positive, q.hard_negative) if it.item_id not in emb]
    if missing:
        raise ConfigurationError(f"{len(missing)} quadruplet items lack embeddings, e.g. {missing[0]}")
    encoder = MelStatEncoder(cfg.encoder_config())
    if resume is not None and not Path(resume).exists():
        raise ConfigurationError(f"checkpoint not found: {resume}")
    state = train(cfg.train_config(), quads, emb, out / "model", encoder.checksum, resume)
    ckpt = out / "model" / "checkpoint.acxc"
    rows = (out / "model" / "metrics.csv").read_text().splitlines()
    last = dict(zip(rows[0].split(","), rows[-1].split(",")))
    print(f"step {state.step}: " + " ".join(f"{k}={float(last[k]):.6g}" for k in ("l_c", "l_d", "l_nd", "l_nc", "total", "p_max")))
    print(f"checkpoint -> {ckpt}")
    return ckpt


def cmd_eval(cfg: RunConfig, checkpoint: str | None = None, jobs: int = 1) -> list[Path]:
    out = cfg.out
    pool = read_clean_corpus(out, "test")
    if len(pool) < 2:
        raise ConfigurationError("the test split needs at least two utterances")
    assets = load_assets(out)
    enc_cfg = cfg.encoder_config()
    encoder = MelStatEncoder(enc_cfg)
    reps = [evalsim.Representation(encoder)]
    if checkpoint is not None:
        if not Path(checkpoint).exists():
            raise ConfigurationError(f"checkpoint not found: {checkpoint}")
        state = load_checkpoint(checkpoint)
        stored = state.meta.get("encoder_checksum")
        if stored is not None and stored != encoder.checksum():
            raise ConfigurationError("checkpoint was trained against a different encoder config")
        reps.append(evalsim.Representation(encoder, state.params))
    (out / "eval").mkdir(parents=True, exist_ok=True)
    n = cfg.eval.n_per_point
    written = []
    with worker_map(jobs, evalsim.init_worker, (str(out), str(out / "assets"), asdict(enc_cfg))) as map_fn:
        for kind in ("noise", "reverb", "bandwidth"):
            plan = evalsim.plan_sweep(kind, pool, assets, cfg.seed, n)
            encoded = evalsim.encode_plan(plan, map_fn)
            for rep in reps:
                result = evalsim.summarize(kind, plan, encoded, rep, n)
                path = out / "eval" / f"{rep.tag}_{kind}.csv"
                evalsim.emit_csv(result, path)
                written.append(path)
                print(f"{rep.tag:<13}{kind:<10} spearman={result.spearman_clean():+.3f} "
                      f"drop={result.clean_drop():+.3f} harshest: positive={result.mean_sim_positive[0]:+.3f} "
                      f"clean={result.mean_sim_clean[0]:+.3f}")
    return written


def cmd_gradcheck(seeds: int = 20, tol: float = 1e-4, corrupt: float = 0.0) -> gradcheck.GradcheckReport:
    report = gradcheck.check(seeds=range(seeds), corrupt=corrupt)
    for line in report.lines():
        print(line)
    if not report.passed(tol):
        raise VerificationFailed(f"max relative error {report.max_rel_error:.3e} >= {tol:g}")
    return report
