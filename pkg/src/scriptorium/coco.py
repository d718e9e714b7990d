"""COCO JSON subset: reading (with border clamping) and canonical writing.

Schema: top-level ``images`` (id, file_name, width, height, page_index),
``annotations`` (id, image_id, category_id, bbox as [x, y, w, h], source),
``categories`` (id, name). Unknown top-level keys are preserved on read
(``CocoLoadReport.extra_keys``) and dropped on write. Annotations
overshooting the image border are clamped with a counted warning; boxes
that degenerate under clamping are rejected with a counted warning.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from scriptorium.core import (
    CATEGORY_NAMES,
    Annotation,
    BBox,
    CategoryTable,
    DatasetCOCO,
    Detection,
    ImageRecord,
    clamp_box,
)
from scriptorium.errors import ParseError, ValidationError

log = logging.getLogger(__name__)

_SCHEMA_KEYS = ("images", "annotations", "categories")


@dataclass
class CocoLoadReport:
    """Load-time repairs and leftovers: clamp tallies plus preserved extras."""

    clamped: int = 0
    rejected: int = 0
    extra_keys: dict = field(default_factory=dict)


def dataset_from_dict(data: dict) -> tuple[DatasetCOCO, CocoLoadReport]:
    report = CocoLoadReport()
    for key in _SCHEMA_KEYS:
        if key not in data:
            raise ValidationError(f"COCO document missing top-level key {key!r}")
    report.extra_keys = {k: v for k, v in data.items() if k not in _SCHEMA_KEYS}

    cats = sorted(data["categories"], key=lambda c: c["id"])
    entries = tuple((int(c["id"]), str(c["name"])) for c in cats)
    categories = CategoryTable(entries)  # raises unless it matches the frozen table

    images = []
    for rec in data["images"]:
        try:
            images.append(
                ImageRecord(
                    id=int(rec["id"]),
                    file_name=str(rec["file_name"]),
                    width=int(rec["width"]),
                    height=int(rec["height"]),
                    page_index=int(rec["page_index"]),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"image record missing key {exc}: {rec!r}") from exc
    by_id = {img.id: img for img in images}

    annotations = []
    for rec in data["annotations"]:
        try:
            image_id = int(rec["image_id"])
            x, y, w, h = (float(v) for v in rec["bbox"])
            ann_id = int(rec["id"])
            category_id = int(rec["category_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad annotation record {rec!r}: {exc}") from exc
        img = by_id.get(image_id)
        if img is None:
            raise ValidationError(f"annotation {ann_id} references unknown image {image_id}")
        box = clamp_box(x, y, w, h, img.width, img.height)
        if box is None:
            report.rejected += 1
            log.warning("annotation %s: zero area after clamping, rejected", ann_id)
            continue
        if (box.x, box.y, box.w, box.h) != (x, y, w, h):
            report.clamped += 1
            log.warning("annotation %s: clamped to image %s bounds", ann_id, image_id)
        annotations.append(
            Annotation(
                id=ann_id,
                image_id=image_id,
                category_id=category_id,
                bbox=box,
                source=str(rec.get("source", "merged")),
            )
        )

    return DatasetCOCO(tuple(images), tuple(annotations), categories), report


def dataset_to_dict(ds: DatasetCOCO) -> dict:
    """Canonical form: records sorted by id, schema keys only."""
    return {
        "images": [
            {
                "id": img.id,
                "file_name": img.file_name,
                "width": img.width,
                "height": img.height,
                "page_index": img.page_index,
            }
            for img in sorted(ds.images, key=lambda i: i.id)
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                "source": a.source,
            }
            for a in sorted(ds.annotations, key=lambda a: a.id)
        ],
        "categories": [{"id": i, "name": name} for i, name in enumerate(CATEGORY_NAMES)],
    }


def dumps_dataset(ds: DatasetCOCO) -> str:
    return json.dumps(dataset_to_dict(ds), indent=2) + "\n"


def read_coco(path: str | Path) -> tuple[DatasetCOCO, CocoLoadReport]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: COCO document must be a JSON object")
    return dataset_from_dict(data)


def write_coco(ds: DatasetCOCO, path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def detections_to_list(dets: list[Detection]) -> list[dict]:
    return [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            "score": d.score,
        }
        for d in dets
    ]


def detections_from_list(data: list) -> list[Detection]:
    dets = []
    for rec in data:
        try:
            x, y, w, h = (float(v) for v in rec["bbox"])
            dets.append(
                Detection(
                    image_id=int(rec["image_id"]),
                    category_id=int(rec["category_id"]),
                    bbox=BBox(x, y, w, h),
                    score=float(rec["score"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad detection record {rec!r}: {exc}") from exc
    return dets


def read_detections(path: str | Path) -> list[Detection]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, list):
        raise ValidationError(f"{path}: detections file must be a JSON array")
    return detections_from_list(data)


def write_detections(dets: list[Detection], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(detections_to_list(dets), indent=2) + "\n", encoding="utf-8"
    )
