"""Command-line interface: exit codes, artifacts, determinism."""

import json
import os

import pytest

from xlingcl.cli import main

FAST_CFG = """\
w_s=0.5
w_l=0.0
steps=20
d_feat=256
d_emb=8
batch_size_ir=4
pairs_per_cl_batch=2
extras_per_cl_batch=2
"""


def _gen(tmp_path, scenario="all-parallel", seed=0, extra=()):
    out = tmp_path / f"data-{scenario}-{seed}"
    rc = main(
        ["gen-data", "--scenario", scenario, "--seed", str(seed),
         "--out", str(out), "--bitext-gold", "5", "--bitext-noise", "20",
         *extra]
    )
    assert rc == 0
    return out


@pytest.fixture()
def fast_cfg(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST_CFG)
    return str(p)


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("lr=-1\n")
        rc = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_data_error_is_3(self, tmp_path):
        # training without generated data
        rc = main(
            ["train", "--data", str(tmp_path / "missing"), "--out",
             str(tmp_path / "o")]
        )
        assert rc == 3

    def test_scenario_mismatch_is_2(self, tmp_path, fast_cfg):
        data = _gen(tmp_path, "ir-only")
        rc = main(
            ["train", "--scenario", "all-parallel", "--data", str(data),
             "--out", str(tmp_path / "o"), "--config", fast_cfg]
        )
        assert rc == 2

    def test_corrupt_checkpoint_is_3(self, tmp_path):
        data = _gen(tmp_path)
        ckpt = tmp_path / "bad.ckpt"
        ckpt.write_bytes(b"XXXX" + b"\x00" * 64)
        rc = main(
            ["eval-ir", "--ckpt", str(ckpt), "--data", str(data),
             "--out", str(tmp_path / "o")]
        )
        assert rc == 3


class TestGenData:
    def test_manifest_lists_all_files(self, tmp_path):
        data = _gen(tmp_path, "partial-parallel", seed=3)
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["scenario"] == "partial-parallel"
        assert manifest["uncovered_langs"] == ["l5", "l6", "l7"]
        for entry in manifest["files"]:
            p = data / entry["path"]
            assert p.exists()
            assert p.stat().st_size == entry["size"]

    def test_byte_identical_reruns(self, tmp_path):
        d1 = _gen(tmp_path / "r1", seed=5)
        d2 = _gen(tmp_path / "r2", seed=5)
        names = sorted(os.listdir(d1))
        assert names == sorted(os.listdir(d2))
        for name in names:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_seed_changes_data(self, tmp_path):
        d1 = _gen(tmp_path / "r1", seed=5)
        d2 = _gen(tmp_path / "r2", seed=6)
        assert (d1 / "manifest.json").read_bytes() != (d2 / "manifest.json").read_bytes()


class TestPipeline:
    def test_train_eval_mine_end_to_end(self, tmp_path, fast_cfg):
        data = _gen(tmp_path)
        run = tmp_path / "run"
        rc = main(
            ["train", "--data", str(data), "--out", str(run),
             "--config", fast_cfg, "--seed", "0"]
        )
        assert rc == 0
        assert (run / "model.ckpt").exists()

        ev = tmp_path / "eval"
        rc = main(
            ["eval-ir", "--ckpt", str(run / "model.ckpt"), "--data", str(data),
             "--out", str(ev), "--k", "10"]
        )
        assert rc == 0
        report = json.loads((ev / "eval_report.json").read_text())
        assert set(report["per_lang"]) == {f"l{i}" for i in range(1, 8)}
        assert 0.0 <= report["overall"]["mrr"] <= 1.0
        assert (ev / "run_l1.trec").exists()

        mine = tmp_path / "mine"
        rc = main(
            ["mine-bitext", "--ckpt", str(run / "model.ckpt"),
             "--data", str(data), "--out", str(mine),
             "--mine-k", "2", "--depth", "4"]
        )
        assert rc == 0
        mr = json.loads((mine / "mining_report.json").read_text())
        for key in ("threshold", "precision", "recall", "f1", "cosine_f1"):
            assert key in mr
        assert (mine / "scored_train.tsv").exists()
        assert (mine / "scored_test.tsv").exists()

    def test_train_byte_identical_reruns(self, tmp_path, fast_cfg):
        data = _gen(tmp_path)
        r1, r2 = tmp_path / "r1", tmp_path / "r2"
        for r in (r1, r2):
            rc = main(
                ["train", "--data", str(data), "--out", str(r),
                 "--config", fast_cfg, "--seed", "4"]
            )
            assert rc == 0
        for name in ("model.ckpt", "model.opt", "trace.csv"):
            assert (r1 / name).read_bytes() == (r2 / name).read_bytes()

    def test_eval_byte_identical_reruns(self, tmp_path, fast_cfg):
        data = _gen(tmp_path)
        run = tmp_path / "run"
        main(["train", "--data", str(data), "--out", str(run),
              "--config", fast_cfg, "--seed", "0"])
        e1, e2 = tmp_path / "e1", tmp_path / "e2"
        for e in (e1, e2):
            rc = main(
                ["eval-ir", "--ckpt", str(run / "model.ckpt"),
                 "--data", str(data), "--out", str(e)]
            )
            assert rc == 0
        assert (e1 / "eval_report.json").read_bytes() == (e2 / "eval_report.json").read_bytes()


class TestGradcheckCommand:
    def test_small_run_passes(self, tmp_path):
        out = tmp_path / "gc"
        rc = main(
            ["gradcheck", "--trials", "6", "--composite-trials", "2",
             "--out", str(out)]
        )
        assert rc == 0
        report = json.loads((out / "gradcheck_report.json").read_text())
        assert report["pass"] is True


class TestSweepCommand:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "sweep"
        rc = main(
            ["sweep", "--axis", "parallel-size", "--grid", "50,100",
             "--seeds", "0", "--steps", "10", "--out", str(out)]
        )
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "axis,value,n_seeds,mean_mrr,ci95"
        assert len(lines) == 3
