"""Single entry point: merge, split, run, eval and report subcommands.

Option precedence is flag > config file > built-in default; the config file
(JSON, one section per subcommand) comes from ``--config`` or the
``SCRIPTORIUM_CONFIG`` environment variable. Exit codes: 0 success, 1
domain error, 2 usage error. Fatal errors print one JSON line on stderr.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from scriptorium import coco as coco_io
from scriptorium import report as report_mod
from scriptorium import split as split_mod
from scriptorium.detector import DetectorSpec
from scriptorium.errors import ScriptoriumError, ValidationError
from scriptorium.loop import ExperimentConfig, run_experiment
from scriptorium.merge import MergeConfig, load_and_merge, read_image_manifest
from scriptorium.metrics import evaluate, report_to_table2_dict

log = logging.getLogger("scriptorium")


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps(
            {"level": record.levelname, "name": record.name, "msg": record.getMessage()}
        )


def _setup_logging(level: str, as_json: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if as_json:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper()))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return data


class _Options:
    """Resolves each option as flag > config-file section > default."""

    def __init__(self, config: dict, jobs: int | None):
        self.config = config
        self.jobs = jobs if jobs is not None else (os.cpu_count() or 1)

    def get(self, section: str, key: str, flag_value, default=None):
        if flag_value is not None and flag_value != ():
            return flag_value
        return self.config.get(section, {}).get(key, default)

    def require(self, section: str, key: str, flag_value):
        value = self.get(section, key, flag_value)
        if value is None:
            raise ValidationError(f"missing required input: --{key.replace('_', '-')}")
        return value


@click.group(name="scriptorium", no_args_is_help=False)
@click.option("--log-level", default="info", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]),
              help="Logging verbosity.")
@click.option("--log-json", is_flag=True, help="Emit machine-readable JSON log records.")
@click.option("--config", "config_path", envvar="SCRIPTORIUM_CONFIG", default=None,
              help="JSON config file with per-subcommand option sections "
                   "(also read from $SCRIPTORIUM_CONFIG).")
@click.option("--jobs", type=int, default=None,
              help="Worker pool size for parallel sections [default: logical CPUs].")
@click.pass_context
def cli(ctx, log_level, log_json, config_path, jobs):
    """Manuscript annotation fusion, splitting, AL/SL runs and evaluation."""
    _setup_logging(log_level, log_json)
    ctx.obj = _Options(_load_config_file(config_path), jobs)


@cli.command()
@click.option("--pagexml", "pagexml_dir", default=None, help="Directory of PageXML files.")
@click.option("--mei", "mei_dir", default=None, help="Directory of MEI files.")
@click.option("--svg", "svg_dir", default=None, help="Directory of SVG files.")
@click.option("--images", "manifest", default=None,
              help="JSON manifest of image records (id, file_name, width, height, page_index).")
@click.option("--config", "merge_config", default=None,
              help="JSON file with min_iou and kind_map overrides.")
@click.option("--out", "out_path", default=None, help="Output COCO JSON path.")
@click.option("--report", "report_path", default=None, help="Merge report JSON path.")
@click.pass_obj
def merge(opts, pagexml_dir, mei_dir, svg_dir, manifest, merge_config, out_path, report_path):
    """Fuse PageXML + MEI + SVG annotations into one COCO dataset."""
    manifest = opts.require("merge", "images", manifest)
    out_path = opts.require("merge", "out", out_path)
    pagexml_dir = opts.get("merge", "pagexml", pagexml_dir)
    mei_dir = opts.get("merge", "mei", mei_dir)
    svg_dir = opts.get("merge", "svg", svg_dir)
    merge_config = opts.get("merge", "config", merge_config)
    report_path = opts.get("merge", "report", report_path)

    images = read_image_manifest(manifest)
    config = MergeConfig.from_file(merge_config) if merge_config else MergeConfig()
    dataset, report_doc = load_and_merge(
        pagexml_dir, mei_dir, svg_dir, images, config, jobs=opts.jobs
    )
    coco_io.write_coco(dataset, out_path)
    if report_path:
        Path(report_path).write_text(
            json.dumps(report_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    totals = report_doc["totals"]
    log.info(
        "merged %d annotations over %d images", totals["annotations"], totals["images"]
    )


@cli.command()
@click.option("--features", "features_path", default=None,
              help="JSONL feature file: {'image_id': int, 'vector': [...]} per line.")
@click.option("--ratio", type=float, default=None,
              help="Test fraction of the dataset [default: 0.2].")
@click.option("--out", "out_path", default=None, help="Output split JSON path.")
@click.pass_obj
def split(opts, features_path, ratio, out_path):
    """Cluster feature vectors and carve out a stratified test set."""
    features_path = opts.require("split", "features", features_path)
    out_path = opts.require("split", "out", out_path)
    ratio = opts.get("split", "ratio", ratio, 0.2)

    features = split_mod.read_features(features_path)
    result = split_mod.make_split(features, float(ratio))
    split_mod.write_split(result, out_path)
    log.info("split: %d test / %d train", len(result.test_ids), len(result.train_ids))


@cli.command()
@click.option("--strategy", type=click.Choice(["al", "sl"]), default=None,
              help="al = uncertainty-driven selection, sl = page order.")
@click.option("--gt", "gt_path", default=None, help="Ground-truth COCO JSON.")
@click.option("--split", "split_path", default=None, help="Split JSON from the split command.")
@click.option("--detector", "detector_path", default=None,
              help="Detector spec JSON (synthetic or subprocess).")
@click.option("--rounds", type=int, default=None, help="Number of rounds [default: 20].")
@click.option("--batch", type=int, default=None, help="Images added per round [default: 15].")
@click.option("--seed-count", type=int, default=None,
              help="Initially labeled images [default: 1].")
@click.option("--rng-seed", type=int, default=None, help="Run RNG seed [default: 0].")
@click.option("--images-root", default=None,
              help="Prefix for image file names sent to subprocess detectors.")
@click.option("--out", "out_dir", default=None, help="Run directory.")
@click.option("--resume", is_flag=True, help="Continue from the last complete round.")
@click.pass_obj
def run(opts, strategy, gt_path, split_path, detector_path, rounds, batch, seed_count,
        rng_seed, images_root, out_dir, resume):
    """Run a sequential or active learning experiment."""
    strategy = opts.require("run", "strategy", strategy)
    gt_path = opts.require("run", "gt", gt_path)
    split_path = opts.require("run", "split", split_path)
    detector_path = opts.require("run", "detector", detector_path)
    out_dir = opts.require("run", "out", out_dir)

    gt, _ = coco_io.read_coco(gt_path)
    cfg = ExperimentConfig(
        strategy={"al": "uncertainty", "sl": "sequential"}[strategy],
        split=split_mod.read_split(split_path),
        detector=DetectorSpec.from_file(detector_path),
        rounds=int(opts.get("run", "rounds", rounds, 20)),
        batch_size=int(opts.get("run", "batch", batch, 15)),
        seed_count=int(opts.get("run", "seed_count", seed_count, 1)),
        rng_seed=int(opts.get("run", "rng_seed", rng_seed, 0)),
        images_root=opts.get("run", "images_root", images_root),
        jobs=opts.jobs,
    )
    states = run_experiment(cfg, gt, out_dir, resume=resume)
    final = states[-1].metrics if states else None
    if final is not None:
        log.info("finished %d rounds, final mAP@50=%.3f", len(states), final.map50)


@cli.command(name="eval")
@click.option("--gt", "gt_path", default=None, help="Ground-truth COCO JSON.")
@click.option("--dets", "dets_path", default=None, help="Detections JSON array.")
@click.option("--test-ids", "test_ids_path", default=None,
              help="JSON list of test image ids (a split JSON also works).")
@click.option("--out", "out_path", default=None, help="Metrics JSON output path.")
@click.pass_obj
def eval_cmd(opts, gt_path, dets_path, test_ids_path, out_path):
    """Score detections against the test subset of a dataset."""
    gt_path = opts.require("eval", "gt", gt_path)
    dets_path = opts.require("eval", "dets", dets_path)
    test_ids_path = opts.require("eval", "test_ids", test_ids_path)
    out_path = opts.require("eval", "out", out_path)

    gt, _ = coco_io.read_coco(gt_path)
    dets = coco_io.read_detections(dets_path)
    with open(test_ids_path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("test_ids")
    if not isinstance(data, list):
        raise ValidationError(f"{test_ids_path}: expected a JSON list of image ids")
    test_ids = {int(i) for i in data}

    report = evaluate(dets, gt.restrict(test_ids), jobs=opts.jobs)
    Path(out_path).write_text(
        json.dumps(report_to_table2_dict(report), indent=2) + "\n", encoding="utf-8"
    )
    log.info("mAP@50=%.3f mAP@50:95=%.3f", report.map50, report.map5095)


@cli.command()
@click.option("--runs", "run_dirs", multiple=True,
              help="Run directories to tabulate (repeatable, one or two).")
@click.option("--out", "out_path", default=None, help="CSV output path.")
@click.pass_obj
def report(opts, run_dirs, out_path):
    """Render the round-by-round comparison table (CSV + aligned text)."""
    run_dirs = opts.require("report", "runs", tuple(run_dirs))
    out_path = opts.require("report", "out", out_path)
    csv_text, aligned = report_mod.render_run_dirs(list(run_dirs))
    Path(out_path).write_text(csv_text, encoding="utf-8")
    click.echo(aligned, nl=False)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:  # usage errors
        exc.show()
        return 2
    except click.Abort:
        return 130
    except ScriptoriumError as exc:
        sys.stderr.write(
            json.dumps({"event": "error", "type": type(exc).__name__, "message": str(exc)})
            + "\n"
        )
        return 1
    except OSError as exc:
        sys.stderr.write(
            json.dumps({"event": "error", "type": "OSError", "message": str(exc)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
