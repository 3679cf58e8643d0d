import json

import numpy as np
import pytest

from sigformer.cli import load_run_config, main


def run(argv):
    return main(argv)


class TestCheckSig:
    def test_passes_and_exits_zero(self, capsys):
        code = run(["check-sig", "--trials", "40", "--max-depth", "4"])
        out = capsys.readouterr().out
        assert code == 0
        assert "chen split consistency" in out
        assert "pass" in out


class TestGenerate:
    def test_writes_csv_and_provenance(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = run([
            "generate", "--task", "sine", "--classes", "4", "--per-class", "5",
            "--length", "30", "--seed", "3", "--out-dir", str(out),
        ])
        assert code == 0
        rows = (out / "data.csv").read_text().splitlines()
        assert rows[0] == "series_id,t,x1,y"
        assert len(rows) == 1 + 4 * 5 * 30
        provenance = json.loads((out / "provenance.json").read_text())
        assert provenance["num_samples"] == 20
        assert json.loads((out / "config.json").read_text())["seed"] == 3

    def test_spatial_labels_balanced(self, tmp_path):
        out = tmp_path / "run"
        code = run([
            "generate", "--task", "spatial", "--samples", "100",
            "--length", "120", "--out-dir", str(out),
        ])
        assert code == 0
        labels = set()
        ones = 0
        for line in (out / "data.csv").read_text().splitlines()[1:]:
            sid, _, _, _, y = line.split(",")
            labels.add((sid, y))
        ones = sum(1 for _, y in labels if y == "1")
        assert ones == 50

    def test_rerun_is_byte_identical(self, tmp_path):
        args = ["generate", "--task", "sine", "--classes", "3", "--per-class", "2",
                "--length", "20", "--seed", "9"]
        run(args + ["--out-dir", str(tmp_path / "a")])
        run(args + ["--out-dir", str(tmp_path / "b")])
        assert (tmp_path / "a/data.csv").read_bytes() == (tmp_path / "b/data.csv").read_bytes()


class TestFeatures:
    def test_cache_and_hit(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        run(["generate", "--task", "sine", "--classes", "3", "--per-class", "4",
             "--length", "40", "--out-dir", str(data_dir)])
        feat_dir = tmp_path / "features"
        args = ["features", "--data", str(data_dir / "data.csv"), "--windows", "5",
                "--depth", "2", "--time-augment", "--out-dir", str(feat_dir)]
        assert run(args) == 0
        first = capsys.readouterr().out
        assert "width=12" in first
        assert (feat_dir / "features.npz").exists()

        assert run(args) == 0
        second = capsys.readouterr().out
        assert "cache hit" in second

    def test_univariate_width(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        run(["generate", "--task", "spatial", "--samples", "20", "--length", "120",
             "--out-dir", str(data_dir)])
        capsys.readouterr()
        feat_dir = tmp_path / "features"
        assert run(["features", "--data", str(data_dir / "data.csv"), "--windows", "6",
                    "--depth", "2", "--univariate", "--out-dir", str(feat_dir)]) == 0
        # 2 channels x 2 views x 2(2^2 - 1) per channel-view
        assert "width=24" in capsys.readouterr().out

    def test_corrupted_cache_recomputes(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        run(["generate", "--task", "sine", "--classes", "3", "--per-class", "3",
             "--length", "30", "--out-dir", str(data_dir)])
        feat_dir = tmp_path / "features"
        args = ["features", "--data", str(data_dir / "data.csv"), "--windows", "4",
                "--out-dir", str(feat_dir)]
        run(args)
        capsys.readouterr()
        (feat_dir / "features.meta.json").write_text("{not json")
        assert run(args) == 0
        captured = capsys.readouterr()
        assert "recomputing" in captured.err
        assert "transformed" in captured.out


class TestTrainEval:
    def test_end_to_end(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = run([
            "train", "--task", "sine", "--classes", "3", "--per-class", "8",
            "--length", "40", "--windows", "5", "--time-augment",
            "--epochs", "5", "--batch-size", "8", "--d-model", "12",
            "--seed", "1", "--out-dir", str(out),
        ])
        assert code == 0
        metrics = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
        assert len(metrics) == 5
        assert {"epoch", "train_loss", "val_loss", "val_metric", "seconds"} <= set(metrics[0])
        summary = json.loads((out / "summary.json").read_text())
        assert "accuracy" in summary["test"]

        eval_out = tmp_path / "eval"
        code = run([
            "eval", "--checkpoint", str(out / "checkpoint.npz"),
            "--split", "test", "--out-dir", str(eval_out),
        ])
        assert code == 0
        report = json.loads((eval_out / "eval.json").read_text())
        assert report["accuracy"] == summary["test"]["accuracy"]

    def test_eval_with_drop(self, tmp_path):
        out = tmp_path / "run"
        run([
            "train", "--task", "sine", "--classes", "3", "--per-class", "8",
            "--length", "60", "--windows", "5", "--time-augment",
            "--epochs", "2", "--batch-size", "8", "--d-model", "12",
            "--out-dir", str(out),
        ])
        eval_out = tmp_path / "eval"
        code = run([
            "eval", "--checkpoint", str(out / "checkpoint.npz"),
            "--drop-prob", "0.5", "--out-dir", str(eval_out),
        ])
        assert code == 0
        report = json.loads((eval_out / "eval.json").read_text())
        assert report["drop_prob"] == 0.5


class TestBenchCommand:
    def test_bench_table(self, tmp_path, capsys):
        out = tmp_path / "bench"
        code = run([
            "bench", "--lengths", "40,80", "--windows", "4", "--time-augment",
            "--epochs", "1", "--batch-size", "8", "--d-model", "8",
            "--bench-classes", "2", "--bench-per-class", "8", "--bench-epochs", "2",
            "--out-dir", str(out),
        ])
        assert code == 0
        table = capsys.readouterr().out
        assert "offline s/e" in table
        records = json.loads((out / "bench.json").read_text())
        assert [r["length"] for r in records] == [40, 80]
        assert records[0]["attention_ops_per_epoch"] == records[1]["attention_ops_per_epoch"]


class TestConfigFile:
    def test_round_trip_and_overrides(self, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({
            "seed": 5,
            "dataset": {"task": "sine", "classes": 4, "per_class": 8, "length": 30},
            "features": {"windows": 6, "time_augment": True},
            "train": {"epochs": 2, "batch_size": 4},
            "model": {"d_model": 8},
        }))
        config = load_run_config(cfg_path)
        assert config.seed == 5
        assert config.dataset.classes == 4
        assert config.features.windows == 6

        out = tmp_path / "run"
        code = run(["train", "--config", str(cfg_path), "--epochs", "1",
                    "--out-dir", str(out)])
        assert code == 0
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["train"]["epochs"] == 1  # flag overrides file
        assert echoed["dataset"]["classes"] == 4

    def test_unknown_keys_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"dataset": {"task": "sine", "bogus": 1}}))
        code = run(["train", "--config", str(cfg_path), "--out-dir", str(tmp_path / "x")])
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_unknown_top_level_rejected(self, tmp_path):
        cfg_path = tmp_path / "bad2.json"
        cfg_path.write_text(json.dumps({"mystery": {}}))
        with pytest.raises(ValueError, match="mystery"):
            load_run_config(cfg_path)


def test_missing_csv_path_is_error(tmp_path, capsys):
    code = run(["train", "--task", "csv", "--out-dir", str(tmp_path / "x")])
    assert code == 2
    assert "csv_path" in capsys.readouterr().err
