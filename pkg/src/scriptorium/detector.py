"""The pluggable detector boundary.

Two implementations of one contract: a deterministic synthetic detector for
desk-scale verification, and a subprocess adapter speaking the NDJSON wire
protocol. Both take ``train(images, labels_dir, workdir) -> handle`` and
``predict(handle, images, gt) -> {image_id: [Detection, ...]}``.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from scriptorium import protocol
from scriptorium.core import (
    CATEGORY_NAMES,
    BBox,
    DatasetCOCO,
    Detection,
    ImageRecord,
    clamp_box,
    yolo_line,
)
from scriptorium.errors import DetectorFailure, ProtocolError, ValidationError

DEFAULT_TIMEOUT = 24 * 3600.0
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SyntheticParams:
    """Skill model for the synthetic detector.

    Detect probability p(n) = 1 - exp(-n/tau) rises with training-set size
    n; box jitter max(jitter_floor, jitter0 * exp(-n/tau)) and the expected
    false-positive count fp_rate0 * exp(-n/tau) decay with it.
    """

    tau: float = 60.0
    jitter0: float = 0.30
    jitter_floor: float = 0.03
    fp_rate0: float = 3.0
    rng_seed: int | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.jitter_floor <= self.jitter0 < 1:
            raise ValidationError("need 0 <= jitter_floor <= jitter0 < 1")
        if self.fp_rate0 < 0:
            raise ValidationError("fp_rate0 must be >= 0")

    def detect_probability(self, n: int) -> float:
        return 1.0 - math.exp(-n / self.tau)

    def jitter(self, n: int) -> float:
        return max(self.jitter_floor, self.jitter0 * math.exp(-n / self.tau))

    def fp_rate(self, n: int) -> float:
        return self.fp_rate0 * math.exp(-n / self.tau)


@dataclass(frozen=True)
class DetectorSpec:
    kind: str  # synthetic | subprocess
    command: tuple[str, ...] = ()
    synthetic_params: SyntheticParams | None = None
    warm_start: bool = False
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.kind == "synthetic":
            if self.command or self.synthetic_params is None:
                raise ValidationError("synthetic spec needs synthetic_params and no command")
        elif self.kind == "subprocess":
            if not self.command or self.synthetic_params is not None:
                raise ValidationError("subprocess spec needs a command and no synthetic_params")
        else:
            raise ValidationError(f"unknown detector kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorSpec":
        params = data.get("synthetic_params")
        if params is None and data.get("kind") == "synthetic":
            params = {}
        return cls(
            kind=data.get("kind", "synthetic"),
            command=tuple(data.get("command", ())),
            synthetic_params=SyntheticParams(**params) if params is not None else None,
            warm_start=bool(data.get("warm_start", False)),
            timeout=float(data.get("timeout", DEFAULT_TIMEOUT)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "DetectorSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def write_labels(ds: DatasetCOCO, ids: list[int], directory: str | Path) -> int:
    """One YOLO .txt per image (empty when unannotated); returns file count."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = 0
    for image_id in ids:
        img = ds.image_by_id(image_id)
        lines = [
            yolo_line(a, img)
            for a in sorted(ds.annotations_of(image_id), key=lambda a: a.id)
        ]
        out = directory / f"{Path(img.file_name).stem}.txt"
        out.write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))
        count += 1
    return count


@dataclass(frozen=True)
class SyntheticHandle:
    n_trained: int


class SyntheticDetector:
    """Deterministic simulator: emits jittered ground truth plus decaying noise.

    All randomness comes from a counter-based generator (Philox) keyed by
    (rng_seed, image_id), so outputs are a pure function of (params, n,
    image, ground truth) regardless of request order or batching.
    """

    def __init__(self, params: SyntheticParams):
        if params.rng_seed is None:
            params = replace(params, rng_seed=0)
        self.params = params

    def train(self, images: list[ImageRecord], labels_dir, workdir) -> SyntheticHandle:
        return SyntheticHandle(n_trained=len(images))

    def close(self) -> None:
        pass

    def _generator(self, image_id: int) -> np.random.Generator:
        key = ((self.params.rng_seed & _MASK64) << 64) | (image_id & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def predict(
        self,
        handle: SyntheticHandle,
        images: list[ImageRecord],
        gt: DatasetCOCO,
    ) -> dict[int, list[Detection]]:
        if gt is None:
            raise ValidationError("synthetic detector requires the ground-truth dataset")
        return {img.id: self._predict_one(handle.n_trained, img, gt) for img in images}

    def _predict_one(self, n: int, img: ImageRecord, gt: DatasetCOCO) -> list[Detection]:
        p = self.params.detect_probability(n)
        jit_scale = self.params.jitter(n)
        gen = self._generator(img.id)
        anns = sorted(gt.annotations_of(img.id), key=lambda a: a.id)
        n_ann = len(anns)

        # fixed draw order per image; counts depend only on the ground truth
        u_detect = gen.random(n_ann)
        jit = gen.uniform(-1.0, 1.0, size=(n_ann, 4))
        u_score = gen.uniform(-0.15, 0.15, size=n_ann)
        u_cls = gen.random(n_ann)
        wrong_cls = gen.integers(0, len(CATEGORY_NAMES) - 1, size=n_ann)
        n_fp = int(gen.poisson(self.params.fp_rate(n)))
        fp_geom = gen.random((n_fp, 4))
        fp_score = gen.uniform(0.0, 0.5, size=n_fp)
        fp_cls = gen.integers(0, len(CATEGORY_NAMES), size=n_fp)

        dets: list[Detection] = []
        for i, ann in enumerate(anns):
            if u_detect[i] >= p:
                continue
            b = ann.bbox
            box = clamp_box(
                b.x + jit[i, 0] * jit_scale * b.w,
                b.y + jit[i, 1] * jit_scale * b.h,
                b.w * (1.0 + jit[i, 2] * jit_scale),
                b.h * (1.0 + jit[i, 3] * jit_scale),
                img.width,
                img.height,
            )
            if box is None:  # jittered fully outside; drop
                continue
            if u_cls[i] < p:
                category = ann.category_id
            else:
                category = int(wrong_cls[i])
                if category >= ann.category_id:
                    category += 1
            dets.append(
                Detection(
                    image_id=img.id,
                    category_id=category,
                    bbox=box,
                    score=float(np.clip(p + u_score[i], 0.0, 1.0)),
                )
            )
        for i in range(n_fp):
            w = (0.02 + 0.23 * fp_geom[i, 2]) * img.width
            h = (0.02 + 0.23 * fp_geom[i, 3]) * img.height
            x = fp_geom[i, 0] * (img.width - w)
            y = fp_geom[i, 1] * (img.height - h)
            dets.append(
                Detection(
                    image_id=img.id,
                    category_id=int(fp_cls[i]),
                    bbox=BBox(x, y, w, h),
                    score=float(fp_score[i]),
                )
            )
        return dets


class SubprocessDetector:
    """Adapter speaking the NDJSON protocol to an external trainer process."""

    def __init__(
        self,
        command: tuple[str, ...],
        warm_start: bool = False,
        timeout: float = DEFAULT_TIMEOUT,
        images_root: str | None = None,
    ):
        self.command = list(command)
        self.warm_start = warm_start
        self.timeout = timeout
        self.images_root = images_root
        self.batch_capable = False
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()

    def _ensure_started(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise DetectorFailure(f"cannot spawn detector {self.command}: {exc}") from exc

        def pump(proc, q):
            for line in proc.stdout:
                q.put(line)
            q.put(None)

        threading.Thread(target=pump, args=(self._proc, self._lines), daemon=True).start()
        reply = self._request({"cmd": "hello"}, timeout=min(self.timeout, 60.0))
        self.batch_capable = bool(reply.get("batch", False))

    def _request(self, msg: dict, timeout: float | None = None) -> dict:
        protocol.validate_message(msg)
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(protocol.dump_message(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise DetectorFailure(f"detector pipe closed during {msg.get('cmd')}") from exc
        try:
            line = self._lines.get(timeout=timeout or self.timeout)
        except queue.Empty:
            self._kill()
            raise DetectorFailure(f"detector timed out on {msg.get('cmd')!r}")
        if line is None:
            code = self._proc.poll()
            raise DetectorFailure(f"detector exited (code {code}) during {msg.get('cmd')!r}")
        reply = protocol.parse_message(line)
        protocol.validate_message(reply)
        if not reply.get("ok", False):
            raise DetectorFailure(f"detector error: {reply.get('error', 'unknown')}")
        return reply

    def train(self, images: list[ImageRecord], labels_dir, workdir) -> "SubprocessDetector":
        self._ensure_started()
        reply = self._request(
            {
                "cmd": "train",
                "images": [protocol.image_entry(i, self.images_root) for i in images],
                "labels_dir": str(labels_dir),
                "workdir": str(workdir),
                "warm_start": self.warm_start,
            }
        )
        if reply.get("cmd") != "trained":
            raise DetectorFailure(f"expected trained ack, got {reply!r}")
        return self

    def predict(
        self,
        handle: "SubprocessDetector",
        images: list[ImageRecord],
        gt: DatasetCOCO | None = None,
    ) -> dict[int, list[Detection]]:
        self._ensure_started()
        reply = self._request(
            {
                "cmd": "predict",
                "images": [protocol.image_entry(i, self.images_root) for i in images],
            }
        )
        if reply.get("cmd") != "predictions":
            raise DetectorFailure(f"expected predictions, got {reply!r}")
        requested = {i.id for i in images}
        out: dict[int, list[Detection]] = {}
        for item in reply["items"]:
            image_id = item["image_id"]
            if image_id not in requested:
                raise ProtocolError(f"predictions for unrequested image {image_id}")
            if image_id in out:
                raise ProtocolError(f"duplicate predictions for image {image_id}")
            out[image_id] = [
                Detection(
                    image_id=image_id,
                    category_id=rec["category_id"],
                    bbox=BBox(*(float(v) for v in rec["bbox"])),
                    score=float(rec["score"]),
                )
                for rec in item["detections"]
            ]
        missing = requested - set(out)
        if missing:
            raise ProtocolError(f"predictions missing for images {sorted(missing)[:5]}")
        return out

    def close(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            return
        try:
            self._proc.stdin.write(protocol.dump_message({"cmd": "shutdown"}) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._kill()

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_detector(spec: DetectorSpec, default_rng_seed: int = 0, images_root: str | None = None):
    if spec.kind == "synthetic":
        params = spec.synthetic_params
        if params.rng_seed is None:
            params = replace(params, rng_seed=default_rng_seed)
        return SyntheticDetector(params)
    return SubprocessDetector(
        tuple(spec.command),
        warm_start=spec.warm_start,
        timeout=spec.timeout,
        images_root=images_root,
    )
