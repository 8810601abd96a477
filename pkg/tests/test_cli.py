import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from salmrec.cli import config_hash, main
from salmrec.synthdata import read_dataset


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def manifest(out):
    m = json.loads(out)
    assert {"command", "config_hash", "inputs", "outputs", "timings", "versions"} <= set(m)
    return m


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    assert main(["init", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["datagen", "--out", str(d), "--count", "3", "--seed", "5", "--severity", "0.5", "--size", "192"]) == 0
    return d


class TestDatagen:
    def test_byte_identical_index(self, capsys, tmp_path):
        for name in ("a", "b"):
            code, out, _ = run(capsys, "datagen", "--out", tmp_path / name, "--count", 4, "--seed", 7, "--size", 96)
            assert code == 0
        m = manifest(out)
        assert m["command"] == "datagen" and m["outputs"]["count"] == 4
        assert (tmp_path / "a" / "index.json").read_bytes() == (tmp_path / "b" / "index.json").read_bytes()

    def test_severity_zero(self, capsys, tmp_path):
        assert run(capsys, "datagen", "--out", tmp_path, "--count", 2, "--severity", 0, "--size", 96)[0] == 0
        for s in read_dataset(tmp_path):
            assert np.array_equal(s.distorted_image, s.flat_image)

    def test_count_zero(self, capsys, tmp_path):
        code, out, err = run(capsys, "datagen", "--out", tmp_path / "x", "--count", 0)
        assert code != 0 and out == ""
        assert err.startswith("error: config:") and err.count("\n") == 1
        assert not (tmp_path / "x").exists()

    def test_bad_severity(self, capsys, tmp_path):
        code, _, err = run(capsys, "datagen", "--out", tmp_path / "x", "--count", 1, "--severity", 1.5)
        assert code != 0 and "severity" in err and not (tmp_path / "x").exists()

    def test_unwritable(self, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        code, _, err = run(capsys, "datagen", "--out", blocker / "sub", "--count", 1, "--size", 64)
        assert code != 0 and err.startswith("error: ")


class TestRectify:
    def test_identity_checkpoint_returns_input(self, capsys, ckpt, dataset, tmp_path):
        src = dataset / "000000" / "distorted.png"
        code, out, _ = run(capsys, "rectify", "--ckpt", ckpt, "--in", src, "--out", tmp_path)
        assert code == 0
        a = np.asarray(Image.open(src), dtype=np.float64) / 255
        b = np.asarray(Image.open(tmp_path / "distorted_rectified.png"), dtype=np.float64) / 255
        assert np.abs(a - b).max() <= 1e-5
        assert manifest(out)["outputs"]["files"] == [str(tmp_path / "distorted_rectified.png")]

    def test_dump_intermediates_and_bad_file(self, capsys, ckpt, dataset, tmp_path):
        inp = tmp_path / "in"
        inp.mkdir()
        Image.open(dataset / "000001" / "distorted.png").save(inp / "page.png")
        (inp / "notes.txt").write_text("not an image")
        code, out, _ = run(capsys, "rectify", "--ckpt", ckpt, "--in", inp, "--out", tmp_path / "out", "--dump-intermediates")
        assert code == 0
        m = manifest(out)
        assert len(m["errors"]) == 1 and m["errors"][0]["file"].endswith("notes.txt")
        names = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert names == ["page_3d.png", "page_hline.png", "page_rectified.png", "page_uv.png", "page_vline.png"]

    def test_only_bad_files(self, capsys, ckpt, tmp_path):
        (tmp_path / "a.png").write_text("nope")
        code, _, err = run(capsys, "rectify", "--ckpt", ckpt, "--in", tmp_path / "a.png", "--out", tmp_path / "o")
        assert code != 0 and err.startswith("error: dataset:")

    def test_bad_checkpoint(self, capsys, tmp_path):
        code, _, err = run(capsys, "rectify", "--ckpt", tmp_path, "--in", tmp_path, "--out", tmp_path / "o")
        assert code != 0 and err.count("\n") == 1


class TestEval:
    def test_oracle(self, capsys, dataset, tmp_path):
        code, out, _ = run(capsys, "eval", "--data", dataset, "--out", tmp_path / "metrics.json", "--oracle")
        assert code == 0
        doc = json.loads((tmp_path / "metrics.json").read_text())
        assert doc["count"] == 3
        assert doc["aggregate"]["ld"] < 1e-6 and doc["aggregate"]["ms_ssim"] >= 0.95
        assert manifest(out)["aggregate"] == doc["aggregate"]

    def test_untrained_checkpoint_matches_identity(self, capsys, ckpt, dataset, tmp_path):
        assert run(capsys, "eval", "--ckpt", ckpt, "--data", dataset, "--out", tmp_path / "m.json")[0] == 0
        agg = json.loads((tmp_path / "m.json").read_text())["aggregate"]
        # identity flow: LD equals the mean ground-truth displacement
        assert agg["ld"] == pytest.approx(agg["ld_identity"], rel=0.05)

    def test_empty_dataset(self, capsys, ckpt, tmp_path):
        (tmp_path / "empty").mkdir()
        code, _, err = run(capsys, "eval", "--ckpt", ckpt, "--data", tmp_path / "empty", "--out", tmp_path / "m.json")
        assert code != 0 and err.startswith("error: empty-dataset:")

    def test_needs_ckpt(self, capsys, dataset, tmp_path):
        code, _, err = run(capsys, "eval", "--data", dataset, "--out", tmp_path / "m.json")
        assert code != 0 and "--ckpt" in err


class TestTrain:
    def _config(self, tmp_path, dataset, **kw):
        cfg = {"dataset": str(dataset), "steps": 3, "warmup_steps": 1, "batch_size": 2, "checkpoint_every": 100,
               "out_dir": str(tmp_path / "run"), "model": {"input_size": 32, "width": 0.125, "attn_layers": 1,
               "attn_heads": 2, "flow_depth": 1, "flow_heads": 2}}
        cfg.update(kw)
        p = tmp_path / "train.json"
        p.write_text(json.dumps(cfg))
        return p

    def test_smoke_and_resume(self, capsys, tmp_path, dataset):
        p = self._config(tmp_path, dataset)
        code, out, _ = run(capsys, "train", "--config", p, "--preset", "all_fa_gate")
        assert code == 0
        m = manifest(out)
        assert m["config"]["preset"] == "all_fa_gate" and m["outputs"]["checkpoint"].endswith("step_000003")
        code, out, _ = run(capsys, "train", "--config", p, "--resume", "--steps", 5)
        assert code == 0 and manifest(out)["outputs"]["checkpoint"].endswith("step_000005")
        log = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
        assert [json.loads(l)["step"] for l in log] == [1, 2, 3, 4, 5]

    def test_missing_dataset(self, capsys, tmp_path):
        p = self._config(tmp_path, tmp_path / "absent")
        code, _, err = run(capsys, "train", "--config", p)
        assert code != 0 and err.startswith("error: dataset:")
        assert not (tmp_path / "run").exists()

    def test_env_seed(self, capsys, tmp_path, dataset, monkeypatch):
        p = self._config(tmp_path, dataset, steps=2)
        monkeypatch.setenv("SALMREC_SEED", "42")
        code, out, _ = run(capsys, "train", "--config", p)
        assert code == 0 and manifest(out)["config"]["seed"] == 42
        code, out, _ = run(capsys, "train", "--config", p, "--seed", 1)
        assert manifest(out)["config"]["seed"] == 1


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "salmrec.cli", "datagen", "--out", str(tmp_path), "--count", "0"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode != 0 and proc.stdout == ""
    assert proc.stderr.strip().startswith("error: config:") and len(proc.stderr.strip().splitlines()) == 1
