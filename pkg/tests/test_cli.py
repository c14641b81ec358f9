import json
import subprocess
import sys

import pytest

from acxkit.cli import main

TINY = {
    "corpus": {"n_train": 6, "n_test": 3, "utterance_s": 0.5, "per_subset": 2,
               "synthetic_noises": 6, "synthetic_rirs_per_room": 2},
    "quads": {"n_batches": 3, "batch_size": 3},
    "encoder": {"dim": 32},
    "head": {"hidden": 16, "dim_out": 8},
    "trainer": {"steps": 6, "batch_size": 3, "checkpoint_every": 3},
    "eval": {"n_per_point": 1},
}


def write_config(path, **overrides):
    cfg = json.loads(json.dumps(TINY))
    for section, values in overrides.items():
        cfg[section] = {**cfg.get(section, {}), **values} if isinstance(values, dict) else values
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "c.json")
    out = str(root / "run")
    common = ["--config", cfg, "--seed", "4", "--out", out]
    for cmd in ("synth", "quads", "embed", "train"):
        assert main([cmd, *common]) == 0
    return root, cfg, out, common


def test_pipeline_outputs(run_dir, capsys):
    root, cfg, out, common = run_dir
    assert main(["eval", *common, "--checkpoint", f"{out}/model/checkpoint.acxc"]) == 0
    files = sorted(p.name for p in (root / "run" / "eval").iterdir())
    assert len(files) == 6
    rows = (root / "run" / "model" / "metrics.csv").read_text().splitlines()
    assert rows[0] == "step,l_c,l_d,l_nd,l_nc,total,p_max" and len(rows) == 1 + 6


def test_eval_raw_only(tmp_path, run_dir):
    root, cfg, out, common = run_dir
    import shutil
    dup = tmp_path / "dup"
    shutil.copytree(out, dup)
    shutil.rmtree(dup / "eval", ignore_errors=True)
    assert main(["eval", "--config", cfg, "--seed", "4", "--out", str(dup)]) == 0
    assert len(list((dup / "eval").iterdir())) == 3


def test_synth_summary(run_dir, capsys, tmp_path):
    _, cfg, _, _ = run_dir
    assert main(["synth", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "s")]) == 0
    text = capsys.readouterr().out
    assert "13 subsets written" in text
    assert sum(1 for line in text.splitlines() if line.endswith(".jsonl")) == 14


def test_embed_count_matches_manifest(run_dir):
    from acxkit.encoder import load_embeddings
    from acxkit.quadruplet import read_quad_manifest
    root, _, out, _ = run_dir
    emb = load_embeddings(f"{out}/embeddings.acxe")
    _, quads = read_quad_manifest(f"{out}/quads.jsonl")
    assert set(emb) == {it.item_id for q in quads for it in q.items()}
    assert all(v.shape == (32,) for v in emb.values())


def test_rerun_is_byte_identical(run_dir, tmp_path):
    root, cfg, out, _ = run_dir
    other = str(tmp_path / "again")
    for cmd in ("synth", "quads", "embed", "train"):
        assert main([cmd, "--config", cfg, "--seed", "4", "--out", other]) == 0
    for rel in ("quads.jsonl", "embeddings.acxe", "corpus/train.jsonl", "subsets/snr_0.jsonl",
                "model/checkpoint.acxc", "model/metrics.csv"):
        assert (root / "run" / rel).read_bytes() == (tmp_path / "again" / rel).read_bytes(), rel


def test_train_resume(run_dir, tmp_path):
    root, cfg, out, common = run_dir
    import shutil
    dup = tmp_path / "r"
    shutil.copytree(out, dup)
    cfg10 = write_config(tmp_path / "c10.json", trainer={"steps": 9})
    base = ["--config", cfg10, "--seed", "4"]
    assert main(["train", *base, "--out", str(dup), "--resume", str(dup / "model/checkpoint.acxc")]) == 0
    fresh = tmp_path / "f"
    shutil.copytree(out, fresh)
    shutil.rmtree(fresh / "model")
    assert main(["train", *base, "--out", str(fresh)]) == 0
    assert (dup / "model/metrics.csv").read_bytes() == (fresh / "model/metrics.csv").read_bytes()


def test_missing_noise_dir_exit_2(tmp_path, capsys):
    missing = tmp_path / "no-such-noise"
    cfg = write_config(tmp_path / "c.json", paths={"noise_dirs": [str(missing)]})
    assert main(["synth", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_seed_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["quads", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_missing_inputs_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for cmd in ("quads", "embed", "train", "eval"):
        assert main([cmd, "--config", cfg, "--seed", "1", "--out", str(tmp_path / "empty")]) == 2


def test_pool_of_one_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json", corpus={"n_train": 1})
    common = ["--config", cfg, "--seed", "1", "--out", str(tmp_path / "o")]
    assert main(["synth", *common]) == 0
    assert main(["quads", *common]) == 2


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "l_nc" in out
    assert main(["gradcheck", "--seeds", "2", "--corrupt", "0.01"]) == 1
    assert "worst" in capsys.readouterr().out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "acxkit.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "quads", "embed", "train", "eval", "gradcheck"):
        assert cmd in res.stdout
