import json
from pathlib import Path

import click.testing
import pytest

from conftest import DATA_DIR, random_dataset, random_features
from scriptorium import coco as coco_io
from scriptorium.cli import cli, main
from scriptorium.split import make_split, write_features, write_split

FIXTURE = DATA_DIR / "fixture_pages"


def invoke(argv):
    return main(argv)


@pytest.fixture
def features_340(tmp_path):
    path = tmp_path / "feats.jsonl"
    write_features(random_features(list(range(1, 341)), seed=40), path)
    return path


class TestExitCodes:
    def test_no_arguments_is_usage_error(self, capsys):
        assert invoke([]) == 2
        assert "Usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert invoke(["frobnicate"]) == 2

    def test_missing_input_is_domain_error(self, tmp_path, capsys):
        code = invoke(["run", "--strategy", "al", "--out", str(tmp_path / "r")])
        assert code == 1
        err = capsys.readouterr().err
        assert "--gt" in err  # names the missing input

    def test_split_success(self, tmp_path, features_340):
        out = tmp_path / "split.json"
        code = invoke(["split", "--features", str(features_340),
                       "--ratio", "0.2", "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert len(doc["test_ids"]) == 68
        assert len(doc["train_ids"]) == 272

    def test_domain_error_is_structured(self, tmp_path, capsys):
        bad = tmp_path / "feats.jsonl"
        bad.write_text('{"image_id": 1, "vector": [0.0]}\n')
        code = invoke(["split", "--features", str(bad), "--out", str(tmp_path / "s")])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        record = json.loads(err)
        assert record["event"] == "error" and record["type"]


class TestHelpDocumentsEveryFlag:
    def test_all_subcommands(self):
        runner = click.testing.CliRunner()
        for name, command in cli.commands.items():
            result = runner.invoke(cli, [name, "--help"])
            assert result.exit_code == 0
            for param in command.params:
                assert any(opt in result.output for opt in param.opts), (
                    f"{name} --help does not document {param.opts}"
                )
            assert command.help, f"{name} lacks a help string"


class TestConfigPrecedence:
    def test_flag_beats_config_beats_default(self, tmp_path, features_340):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"split": {"ratio": 0.1}}))

        out1 = tmp_path / "s1.json"
        assert invoke(["--config", str(cfg), "split", "--features", str(features_340),
                       "--out", str(out1)]) == 0
        assert len(json.loads(out1.read_text())["test_ids"]) == 34  # config wins

        out2 = tmp_path / "s2.json"
        assert invoke(["--config", str(cfg), "split", "--features", str(features_340),
                       "--ratio", "0.2", "--out", str(out2)]) == 0
        assert len(json.loads(out2.read_text())["test_ids"]) == 68  # flag wins

        out3 = tmp_path / "s3.json"
        assert invoke(["split", "--features", str(features_340),
                       "--out", str(out3)]) == 0
        assert len(json.loads(out3.read_text())["test_ids"]) == 68  # default 0.2

    def test_env_var_config(self, tmp_path, features_340, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"split": {"ratio": 0.1}}))
        monkeypatch.setenv("SCRIPTORIUM_CONFIG", str(cfg))
        out = tmp_path / "s.json"
        assert invoke(["split", "--features", str(features_340),
                       "--out", str(out)]) == 0
        assert len(json.loads(out.read_text())["test_ids"]) == 34


class TestMergeCommand:
    def test_end_to_end(self, tmp_path):
        out = tmp_path / "coco.json"
        report = tmp_path / "report.json"
        code = invoke([
            "merge",
            "--pagexml", str(FIXTURE / "pagexml"),
            "--mei", str(FIXTURE / "mei"),
            "--svg", str(FIXTURE / "svg"),
            "--images", str(FIXTURE / "images.json"),
            "--out", str(out),
            "--report", str(report),
        ])
        assert code == 0
        ds, _ = coco_io.read_coco(out)
        assert len(ds.annotations) == 14
        doc = json.loads(report.read_text())
        assert doc["totals"]["annotations"] == 14

    def test_idempotent_outputs(self, tmp_path):
        args = [
            "merge",
            "--pagexml", str(FIXTURE / "pagexml"),
            "--mei", str(FIXTURE / "mei"),
            "--svg", str(FIXTURE / "svg"),
            "--images", str(FIXTURE / "images.json"),
        ]
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub / "coco.json"
            out.parent.mkdir()
            assert invoke(args + ["--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestRunEvalReportPipeline:
    def test_full_pipeline(self, tmp_path):
        ds = random_dataset(16, seed=41, mean_anns=5)
        gt_path = tmp_path / "coco.json"
        coco_io.write_coco(ds, gt_path)

        feats = random_features([img.id for img in ds.images], seed=42)
        split = make_split(feats, 0.25)
        split_path = tmp_path / "split.json"
        write_split(split, split_path)

        det_path = tmp_path / "detector.json"
        det_path.write_text(json.dumps(
            {"kind": "synthetic", "synthetic_params": {"tau": 5.0}}
        ))

        runs = []
        for strategy in ("al", "sl"):
            run_dir = tmp_path / f"run-{strategy}"
            code = invoke([
                "run", "--strategy", strategy,
                "--gt", str(gt_path), "--split", str(split_path),
                "--detector", str(det_path),
                "--rounds", "3", "--batch", "3", "--seed-count", "1",
                "--rng-seed", "5", "--out", str(run_dir),
            ])
            assert code == 0
            runs.append(run_dir)

        table = tmp_path / "table.csv"
        code = invoke(["report", "--runs", str(runs[0]), "--runs", str(runs[1]),
                       "--out", str(table)])
        assert code == 0
        lines = table.read_text().strip().splitlines()
        assert len(lines) == 4  # header + 3 rounds
        assert lines[0].startswith("round,images,AL_map50")

        # eval the persisted round-2 predictions through the CLI
        preds = json.loads((runs[0] / "round_2" / "predictions.json").read_text())
        dets = [d for dets in preds["test"].values() for d in dets]
        dets_path = tmp_path / "dets.json"
        dets_path.write_text(json.dumps(dets))
        metrics_path = tmp_path / "metrics.json"
        code = invoke(["eval", "--gt", str(gt_path), "--dets", str(dets_path),
                       "--test-ids", str(split_path), "--out", str(metrics_path)])
        assert code == 0
        doc = json.loads(metrics_path.read_text())
        assert set(doc) == {"map50", "map5095", "precision", "recall", "f1",
                            "per_class_ap50"}

    def test_eval_leakage_is_domain_error(self, tmp_path, capsys):
        ds = random_dataset(4, seed=43, mean_anns=3)
        gt_path = tmp_path / "coco.json"
        coco_io.write_coco(ds, gt_path)
        dets_path = tmp_path / "dets.json"
        dets_path.write_text(json.dumps(
            [{"image_id": 1, "category_id": 0, "bbox": [0, 0, 5, 5], "score": 0.5}]
        ))
        ids_path = tmp_path / "ids.json"
        ids_path.write_text(json.dumps([2]))  # detection references image 1
        code = invoke(["eval", "--gt", str(gt_path), "--dets", str(dets_path),
                       "--test-ids", str(ids_path), "--out", str(tmp_path / "m.json")])
        assert code == 1
        assert "LeakageError" in capsys.readouterr().err
