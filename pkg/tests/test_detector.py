import math
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import make_image, random_dataset
from scriptorium.detector import (
    DetectorSpec,
    SubprocessDetector,
    SyntheticDetector,
    SyntheticParams,
    make_detector,
    write_labels,
)
from scriptorium.errors import DetectorFailure, ProtocolError, ValidationError
from scriptorium.metrics import evaluate

STUBS = Path(__file__).parent / "stubs"


def stub_command(name):
    return (sys.executable, str(STUBS / name))


class TestSyntheticParams:
    def test_skill_formulas(self):
        p = SyntheticParams(rng_seed=0)
        assert p.detect_probability(0) == 0.0
        assert p.detect_probability(272) == pytest.approx(0.989, abs=5e-4)
        # strictly increasing detect probability, non-increasing jitter
        probs = [p.detect_probability(n) for n in range(0, 300, 10)]
        assert all(a < b for a, b in zip(probs, probs[1:]))
        jits = [p.jitter(n) for n in range(0, 300, 10)]
        assert all(a >= b for a, b in zip(jits, jits[1:]))
        assert min(jits) == p.jitter_floor

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            SyntheticParams(tau=0)
        with pytest.raises(ValidationError):
            SyntheticParams(jitter0=0.01, jitter_floor=0.2)


class TestSyntheticDetector:
    def detector(self, seed=7):
        return SyntheticDetector(SyntheticParams(rng_seed=seed))

    def test_train_records_pool_size(self, tiny_dataset):
        det = self.detector()
        handle = det.train(list(tiny_dataset.images[:1]), None, None)
        assert handle.n_trained == 1
        handle = det.train(list(tiny_dataset.images), None, None)
        assert handle.n_trained == 3

    def test_untrained_emits_only_noise(self):
        ds = random_dataset(5, seed=3)
        det = self.detector()
        handle = det.train([], None, None)
        preds = det.predict(handle, list(ds.images), ds)
        all_dets = [d for dets in preds.values() for d in dets]
        assert all_dets, "expected some false positives"
        assert all(d.score <= 0.5 for d in all_dets)  # the noise block caps at 0.5

    def test_batch_split_invariance(self):
        ds = random_dataset(8, seed=4)
        det = self.detector()
        handle = det.train(list(ds.images[:4]), None, None)
        whole = det.predict(handle, list(ds.images), ds)
        part = det.predict(handle, list(ds.images[:3]), ds)
        part.update(det.predict(handle, list(ds.images[3:][::-1]), ds))
        assert whole == part

    def test_repeat_determinism(self):
        ds = random_dataset(6, seed=5)
        det_a, det_b = self.detector(seed=9), self.detector(seed=9)
        ha = det_a.train(list(ds.images[:2]), None, None)
        hb = det_b.train(list(ds.images[:2]), None, None)
        assert det_a.predict(ha, list(ds.images), ds) == det_b.predict(hb, list(ds.images), ds)

    def test_high_skill_reaches_high_map(self):
        ds = random_dataset(10, seed=6)
        det = self.detector()
        handle = det.train(list(ds.images), None, None)
        handle = type(handle)(n_trained=600)  # 10x the time constant
        preds = det.predict(handle, list(ds.images), ds)
        dets = [d for ds_ in preds.values() for d in ds_]
        report = evaluate(dets, ds)
        assert report.map50 > 0.9

    def test_skill_grows_with_training_size(self):
        ds = random_dataset(60, seed=8)  # >10^3 annotation trials per skill level
        det = self.detector()
        total_gt = len(ds.annotations)
        assert total_gt > 1000

        def tp_like_rate(n):
            handle = det.train(list(ds.images)[: min(n, 60)], None, None)
            handle = type(handle)(n_trained=n)
            preds = det.predict(handle, list(ds.images), ds)
            hits = 0
            for image_id, dets in preds.items():
                gt_boxes = [a.bbox for a in ds.annotations_of(image_id)]
                from scriptorium.core import iou

                for d in dets:
                    if any(iou(d.bbox, g) >= 0.5 for g in gt_boxes):
                        hits += 1
            return hits / total_gt

        assert tp_like_rate(30) < tp_like_rate(120) < tp_like_rate(400)


class TestWriteLabels:
    def test_empty_label_file_created(self, tmp_path, tiny_dataset):
        count = write_labels(tiny_dataset, [3], tmp_path)
        assert count == 1
        content = (tmp_path / "page-0003.txt").read_bytes()
        assert content == b""

    def test_counts(self, tmp_path, tiny_dataset):
        count = write_labels(tiny_dataset, [1, 2, 3], tmp_path)
        assert count == 3
        lines = []
        for f in sorted(tmp_path.glob("*.txt")):
            lines += f.read_text().splitlines()
        assert len(lines) == 3

    def test_lf_endings_and_order(self, tmp_path, tiny_dataset):
        write_labels(tiny_dataset, [1], tmp_path)
        raw = (tmp_path / "page-0001.txt").read_bytes()
        assert raw.endswith(b"\n") and b"\r" not in raw
        first_fields = [line.split()[0] for line in raw.decode().splitlines()]
        assert first_fields == ["0", "4"]  # ascending annotation id


class TestDetectorSpec:
    def test_synthetic_default_params(self):
        spec = DetectorSpec.from_dict({"kind": "synthetic"})
        assert spec.synthetic_params.tau == 60.0

    def test_exactly_one_side(self):
        with pytest.raises(ValidationError):
            DetectorSpec(kind="synthetic", command=("x",), synthetic_params=SyntheticParams())
        with pytest.raises(ValidationError):
            DetectorSpec(kind="subprocess", command=())

    def test_seed_inheritance(self):
        spec = DetectorSpec.from_dict({"kind": "synthetic"})
        det = make_detector(spec, default_rng_seed=123)
        assert det.params.rng_seed == 123


class TestSubprocessDetector:
    def test_echo_stub_round_trip(self, tiny_dataset, tmp_path):
        det = SubprocessDetector(stub_command("echo_stub.py"), timeout=30)
        with det:
            handle = det.train(list(tiny_dataset.images), tmp_path, tmp_path)
            assert det.batch_capable
            preds = det.predict(handle, list(tiny_dataset.images))
            assert set(preds) == {1, 2, 3}
            assert all(v == [] for v in preds.values())

    def test_crash_is_detector_failure(self, tiny_dataset, tmp_path):
        det = SubprocessDetector(stub_command("crash_stub.py"), timeout=30)
        with det:
            handle = det.train(list(tiny_dataset.images), tmp_path, tmp_path)
            with pytest.raises(DetectorFailure):
                det.predict(handle, list(tiny_dataset.images))

    def test_bad_score_is_protocol_error(self, tiny_dataset, tmp_path):
        det = SubprocessDetector(stub_command("badscore_stub.py"), timeout=30)
        with det:
            handle = det.train(list(tiny_dataset.images), tmp_path, tmp_path)
            with pytest.raises(ProtocolError) as err:
                det.predict(handle, list(tiny_dataset.images))
            assert "score" in str(err.value)

    def test_missing_binary(self):
        det = SubprocessDetector(("/nonexistent/detector",), timeout=5)
        with pytest.raises(DetectorFailure):
            det.train([], "x", "y")
