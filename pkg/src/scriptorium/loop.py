"""The experiment engine: sequential and uncertainty-driven labeling rounds.

Each round trains the detector on the labeled pool, predicts, evaluates on
the fixed test set, then selects and reveals the next batch. Every round is
persisted to its own directory (state written last, atomically), making a
run resumable from the last complete round; a detector failure removes the
partial round directory and halts the run.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from scriptorium import coco
from scriptorium.core import Annotation, DatasetCOCO, Detection
from scriptorium.detector import DetectorSpec, SyntheticParams, make_detector, write_labels
from scriptorium.errors import LeakageError, ValidationError
from scriptorium.metrics import MetricsReport, evaluate
from scriptorium.split import SplitResult, split_from_dict, split_to_dict

log = logging.getLogger(__name__)

STRATEGIES = ("sequential", "uncertainty")


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str
    split: SplitResult
    detector: DetectorSpec
    rounds: int = 20
    batch_size: int = 15
    seed_count: int = 1
    rng_seed: int = 0
    images_root: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}")
        if self.rounds < 1 or self.batch_size < 1 or self.seed_count < 1:
            raise ValidationError("rounds, batch_size and seed_count must all be >= 1")

    def to_dict(self) -> dict:
        detector = {
            "kind": self.detector.kind,
            "command": list(self.detector.command),
            "warm_start": self.detector.warm_start,
            "timeout": self.detector.timeout,
        }
        if self.detector.synthetic_params is not None:
            p = self.detector.synthetic_params
            detector["synthetic_params"] = {
                "tau": p.tau,
                "jitter0": p.jitter0,
                "jitter_floor": p.jitter_floor,
                "fp_rate0": p.fp_rate0,
                "rng_seed": p.rng_seed,
            }
        return {
            "strategy": self.strategy,
            "rounds": self.rounds,
            "batch_size": self.batch_size,
            "seed_count": self.seed_count,
            "rng_seed": self.rng_seed,
            "images_root": self.images_root,
            "detector": detector,
            "split": split_to_dict(self.split),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        det = dict(data["detector"])
        params = det.get("synthetic_params")
        detector = DetectorSpec(
            kind=det["kind"],
            command=tuple(det.get("command", ())),
            synthetic_params=SyntheticParams(**params) if params is not None else None,
            warm_start=det.get("warm_start", False),
            timeout=det.get("timeout", 24 * 3600.0),
        )
        return cls(
            strategy=data["strategy"],
            split=split_from_dict(data["split"]),
            detector=detector,
            rounds=data["rounds"],
            batch_size=data["batch_size"],
            seed_count=data["seed_count"],
            rng_seed=data["rng_seed"],
            images_root=data.get("images_root"),
        )


@dataclass
class RoundState:
    round: int
    labeled_ids: list[int]
    unlabeled_ids: list[int]
    metrics: MetricsReport
    selection_trace: list[tuple[int, float | None]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "labeled_ids": self.labeled_ids,
            "unlabeled_ids": self.unlabeled_ids,
            "metrics": self.metrics.to_dict(),
            "selection_trace": [[i, s] for i, s in self.selection_trace],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoundState":
        return cls(
            round=data["round"],
            labeled_ids=list(data["labeled_ids"]),
            unlabeled_ids=list(data["unlabeled_ids"]),
            metrics=MetricsReport.from_dict(data["metrics"]),
            selection_trace=[(i, s) for i, s in data["selection_trace"]],
        )


def schedule_size(round_idx: int, cfg: ExperimentConfig, pool: int) -> int:
    """Labeled-set size at a round: seed + round * batch, capped by the pool."""
    if round_idx < 0:
        raise ValidationError(f"round index {round_idx} must be >= 0")
    return min(cfg.seed_count + round_idx * cfg.batch_size, pool)


def image_uncertainty(dets: list[Detection]) -> float:
    """Max detection confidence; an empty prediction is maximally uncertain."""
    return max((d.score for d in dets), default=0.0)


def select_next(
    unlabeled_ids: list[int],
    preds: dict[int, list[Detection]],
    k: int,
    strategy: str,
    page_index: dict[int, int],
) -> list[int]:
    """The next batch: least-confident first, or next pages in order."""
    if k < 1:
        raise ValidationError(f"selection size {k} must be >= 1")
    if strategy == "sequential":
        ordered = sorted(unlabeled_ids, key=lambda i: page_index[i])
        return ordered[: min(k, len(ordered))]
    if strategy == "uncertainty":
        missing = [i for i in unlabeled_ids if i not in preds]
        if missing:
            raise ValidationError(
                f"uncertainty selection lacks predictions for images {missing[:5]}"
            )
        ordered = sorted(
            unlabeled_ids, key=lambda i: (image_uncertainty(preds[i]), page_index[i])
        )
        return ordered[: min(k, len(ordered))]
    raise ValidationError(f"unknown strategy {strategy!r}")


def reveal_labels(
    ids: list[int], gt: DatasetCOCO, test_ids: frozenset[int] | set[int]
) -> list[Annotation]:
    """Simulated annotation: hand back held-out ground truth, never test labels."""
    leaked = [i for i in ids if i in test_ids]
    if leaked:
        raise LeakageError(f"refusing to reveal labels of test images {leaked[:5]}")
    return [a for i in ids for a in gt.annotations_of(i)]


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _round_dir(out_dir: Path, round_idx: int) -> Path:
    return out_dir / f"round_{round_idx}"


def _write_metrics_csv(out_dir: Path, states: list[RoundState]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "images", "map50", "map5095", "precision", "recall", "f1"])
    for s in states:
        m = s.metrics
        writer.writerow(
            [
                s.round,
                len(s.labeled_ids),
                repr(m.map50),
                repr(m.map5095),
                repr(m.precision),
                repr(m.recall),
                "NaN" if math.isnan(m.f1) else repr(m.f1),
            ]
        )
    (out_dir / "metrics.csv").write_text(buf.getvalue(), encoding="utf-8")


def _persist_round(
    out_dir: Path,
    state: RoundState,
    test_preds: dict[int, list[Detection]],
    unl_preds: dict[int, list[Detection]],
) -> None:
    rdir = _round_dir(out_dir, state.round)
    preds_doc = {
        "test": {str(i): coco.detections_to_list(d) for i, d in sorted(test_preds.items())},
        "unlabeled": {str(i): coco.detections_to_list(d) for i, d in sorted(unl_preds.items())},
    }
    _atomic_write_json(rdir / "predictions.json", preds_doc)
    _atomic_write_json(rdir / "state.json", state.to_dict())  # completion marker, last


def load_states(out_dir: str | Path) -> list[RoundState]:
    """All consecutive complete rounds persisted in a run directory."""
    out_dir = Path(out_dir)
    states = []
    r = 0
    while (_round_dir(out_dir, r) / "state.json").exists():
        with open(_round_dir(out_dir, r) / "state.json", encoding="utf-8") as fh:
            states.append(RoundState.from_dict(json.load(fh)))
        r += 1
    return states


def load_config(out_dir: str | Path) -> ExperimentConfig:
    with open(Path(out_dir) / "config.json", encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def run_experiment(
    cfg: ExperimentConfig,
    gt: DatasetCOCO,
    out_dir: str | Path,
    resume: bool = False,
    stop_after_round: int | None = None,
) -> list[RoundState]:
    """Run (or resume) the round loop, persisting state after every round.

    ``stop_after_round`` halts the run once that round is persisted; a later
    invocation with ``resume=True`` continues from the next round and must
    reproduce an uninterrupted run exactly.
    """
    out_dir = Path(out_dir)
    image_ids = {img.id for img in gt.images}
    known = cfg.split.test_ids | cfg.split.train_ids
    if known - image_ids:
        raise ValidationError(f"split references unknown images {sorted(known - image_ids)[:5]}")
    page_index = {img.id: img.page_index for img in gt.images}

    pool = sorted(cfg.split.train_ids, key=lambda i: page_index[i])
    test_order = sorted(cfg.split.test_ids, key=lambda i: page_index[i])
    gt_test = gt.restrict(set(cfg.split.test_ids))
    by_id = {img.id: img for img in gt.images}

    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "config.json"
    if config_path.exists():
        if not resume:
            raise ValidationError(f"{out_dir} already holds a run; pass resume to continue")
        if load_config(out_dir).to_dict() != cfg.to_dict():
            raise ValidationError(f"{out_dir} was produced by a different configuration")
    else:
        _atomic_write_json(config_path, cfg.to_dict())

    states = load_states(out_dir) if resume else []
    # drop any partial round directory left by an interrupted run
    incomplete = _round_dir(out_dir, len(states))
    if incomplete.exists():
        shutil.rmtree(incomplete)

    if states:
        last = states[-1]
        chosen = [i for i, _ in last.selection_trace]
        labeled = list(last.labeled_ids) + chosen
        unlabeled = [i for i in last.unlabeled_ids if i not in set(chosen)]
        start_round = last.round + 1
    else:
        seed = pool[: min(cfg.seed_count, len(pool))]
        labeled = list(seed)
        unlabeled = [i for i in pool if i not in set(seed)]
        start_round = 0

    detector = make_detector(cfg.detector, default_rng_seed=cfg.rng_seed, images_root=cfg.images_root)
    try:
        for r in range(start_round, cfg.rounds):
            rdir = _round_dir(out_dir, r)
            try:
                if set(labeled) & cfg.split.test_ids:
                    raise LeakageError("labeled pool intersects the test set")
                labels_dir = rdir / "labels"
                write_labels(gt, labeled, labels_dir)
                handle = detector.train([by_id[i] for i in labeled], labels_dir, rdir)

                test_preds = detector.predict(handle, [by_id[i] for i in test_order], gt)
                unl_preds: dict[int, list[Detection]] = {}
                if cfg.strategy == "uncertainty" and unlabeled:
                    unl_preds = detector.predict(handle, [by_id[i] for i in unlabeled], gt)

                dets = [d for i in test_order for d in test_preds[i]]
                metrics = evaluate(dets, gt_test, jobs=cfg.jobs)

                k = schedule_size(r + 1, cfg, len(pool)) - schedule_size(r, cfg, len(pool))
                if k > 0 and unlabeled:
                    chosen = select_next(unlabeled, unl_preds, k, cfg.strategy, page_index)
                else:
                    chosen = []
                reveal_labels(chosen, gt, cfg.split.test_ids)
                trace = [
                    (
                        i,
                        image_uncertainty(unl_preds[i])
                        if cfg.strategy == "uncertainty"
                        else None,
                    )
                    for i in chosen
                ]

                state = RoundState(
                    round=r,
                    labeled_ids=list(labeled),
                    unlabeled_ids=list(unlabeled),
                    metrics=metrics,
                    selection_trace=trace,
                )
                _persist_round(out_dir, state, test_preds, unl_preds)
                states.append(state)
                _write_metrics_csv(out_dir, states)
                log.info(
                    "round %d: %d labeled, mAP@50=%.3f",
                    r,
                    len(labeled),
                    metrics.map50,
                )

                labeled = labeled + chosen
                unlabeled = [i for i in unlabeled if i not in set(chosen)]
            except Exception:
                # keep the run directory consistent: no partial round on disk
                shutil.rmtree(rdir, ignore_errors=True)
                log.error("round %d failed; partial state removed, run halted", r)
                raise
            if stop_after_round is not None and r >= stop_after_round:
                break
    finally:
        detector.close()
    return states
