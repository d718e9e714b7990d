import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes oracles importable

from scriptorium.core import (
    CATEGORY_NAMES,
    Annotation,
    BBox,
    CategoryTable,
    DatasetCOCO,
    Detection,
    ImageRecord,
)
from scriptorium.split import FeatureVector

DATA_DIR = Path(__file__).parent / "data"


def make_image(image_id: int, page_index: int | None = None, size: int = 640) -> ImageRecord:
    return ImageRecord(
        id=image_id,
        file_name=f"page-{image_id:04d}.png",
        width=size,
        height=size,
        page_index=page_index if page_index is not None else image_id,
    )


def random_dataset(
    n_images: int, seed: int, mean_anns: float = 20.0, size: int = 640
) -> DatasetCOCO:
    """Synthetic manuscript-like dataset: random boxes, skewed class mix."""
    rng = np.random.default_rng(seed)
    images = [make_image(i + 1, page_index=i, size=size) for i in range(n_images)]
    weights = np.array([39.0, 36.0, 7.5, 4.3, 3.7, 2.6, 2.7, 2.5, 1.6])
    weights /= weights.sum()
    annotations = []
    ann_id = 1
    for img in images:
        for _ in range(int(rng.poisson(mean_anns))):
            w = float(rng.uniform(12, size / 4))
            h = float(rng.uniform(12, size / 4))
            x = float(rng.uniform(0, size - w))
            y = float(rng.uniform(0, size - h))
            annotations.append(
                Annotation(
                    id=ann_id,
                    image_id=img.id,
                    category_id=int(rng.choice(len(CATEGORY_NAMES), p=weights)),
                    bbox=BBox(x, y, w, h),
                    source="merged",
                )
            )
            ann_id += 1
    return DatasetCOCO(tuple(images), tuple(annotations), CategoryTable())


def random_features(image_ids: list[int], seed: int, dim: int = 8) -> list[FeatureVector]:
    rng = np.random.default_rng(seed)
    return [
        FeatureVector(image_id=i, values=tuple(rng.uniform(0.1, 1.0, size=dim).tolist()))
        for i in image_ids
    ]


def random_eval_instance(rng: np.random.Generator):
    """A small ground-truth + detections pair for metric oracle checks.

    Detections mix jittered copies of ground truth (possible TPs) with
    uniform noise, so instances exercise TP/FP/FN bookkeeping, duplicate
    suppression, and score ties.
    """
    n_images = int(rng.integers(1, 6))
    n_classes = int(rng.integers(1, 5))
    size = 100.0
    gts = []
    gt_id = 1
    for image_id in range(1, n_images + 1):
        for _ in range(int(rng.integers(0, 5))):
            w = float(rng.uniform(5, 40))
            h = float(rng.uniform(5, 40))
            x = float(rng.uniform(0, size - w))
            y = float(rng.uniform(0, size - h))
            gts.append((gt_id, image_id, int(rng.integers(0, n_classes)), (x, y, w, h)))
            gt_id += 1
    dets = []
    for gt in gts:
        for _ in range(int(rng.integers(0, 3))):
            if len(dets) >= 20:
                break
            _, image_id, cls, (x, y, w, h) = gt
            dx, dy = rng.uniform(-10, 10, size=2)
            nx = min(max(x + dx, 0.0), size - 1)
            ny = min(max(y + dy, 0.0), size - 1)
            nw = min(w * float(rng.uniform(0.6, 1.4)), size - nx)
            nh = min(h * float(rng.uniform(0.6, 1.4)), size - ny)
            cls_out = cls if rng.random() < 0.8 else int(rng.integers(0, n_classes))
            score = round(float(rng.uniform(0.05, 1.0)), 2)  # rounding forces ties
            dets.append((image_id, cls_out, (nx, ny, max(nw, 1.0), max(nh, 1.0)), score))
    while len(dets) < int(rng.integers(0, 21)):
        image_id = int(rng.integers(1, n_images + 1))
        w = float(rng.uniform(5, 40))
        h = float(rng.uniform(5, 40))
        x = float(rng.uniform(0, size - w))
        y = float(rng.uniform(0, size - h))
        dets.append(
            (image_id, int(rng.integers(0, n_classes)), (x, y, w, h),
             round(float(rng.uniform(0.05, 1.0)), 2))
        )
    return gts, dets


def to_domain(gts: list, dets: list, size: int = 100):
    """Tuple-form instance -> domain objects (plus the wrapping dataset)."""
    image_ids = sorted({g[1] for g in gts} | {d[0] for d in dets})
    images = tuple(make_image(i, page_index=i, size=size) for i in image_ids)
    annotations = tuple(
        Annotation(id=g[0], image_id=g[1], category_id=g[2], bbox=BBox(*g[3]), source="merged")
        for g in gts
    )
    detections = [
        Detection(image_id=d[0], category_id=d[1], bbox=BBox(*d[2]), score=d[3]) for d in dets
    ]
    return DatasetCOCO(images, annotations, CategoryTable()), detections


@pytest.fixture
def tiny_dataset() -> DatasetCOCO:
    images = (make_image(1, 0), make_image(2, 1), make_image(3, 2))
    annotations = (
        Annotation(id=1, image_id=1, category_id=0, bbox=BBox(10, 10, 50, 40), source="merged"),
        Annotation(id=2, image_id=1, category_id=4, bbox=BBox(100, 20, 30, 60), source="merged"),
        Annotation(id=3, image_id=2, category_id=1, bbox=BBox(5, 5, 200, 25), source="merged"),
    )
    return DatasetCOCO(images, annotations, CategoryTable())
