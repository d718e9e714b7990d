"""Shared domain types, box geometry, and the fixed category taxonomy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scriptorium.errors import FormatError, ValidationError

# Frozen taxonomy; label files rely on these ids staying stable across runs.
CATEGORY_NAMES: tuple[str, ...] = (
    "neume",
    "line",
    "discard",
    "staff",
    "clef",
    "musicDelimiter",
    "text",
    "custos",
    "musicText",
)

SOURCES: frozenset[str] = frozenset({"pagexml", "mei", "svg", "merged"})


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle: top-left corner plus size, absolute pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"BBox.{name} must be finite, got {v!r}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"BBox corner must be non-negative, got ({self.x}, {self.y})")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"BBox must have positive area, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

def clamp_box(
    x: float, y: float, w: float, h: float, width: float, height: float
) -> BBox | None:
    """Intersect a raw rectangle with the image; None when it degenerates.

    Accepts out-of-invariant input (negative corners, overshooting edges)
    since this is the load-time repair step for degraded scans.
    """
    for v in (x, y, w, h):
        if not math.isfinite(v):
            raise ValidationError(f"non-finite box coordinate {v!r}")
    if w <= 0 or h <= 0:
        return None
    # in-bounds boxes pass through untouched: recomputing w as (x+w)-x
    # drifts by an ulp and would mis-flag every load as a clamp
    if x >= 0 and y >= 0 and x + w <= width and y + h <= height:
        return BBox(x, y, w, h)
    x1 = max(x, 0.0)
    y1 = max(y, 0.0)
    x2 = min(x + w, float(width))
    y2 = min(y + h, float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    if a == b:
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    if iw <= 0:
        return 0.0
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if ih <= 0:
        return 0.0
    # x+w round-trips can overshoot the true overlap by an ulp; the
    # intersection never exceeds either area, so clamp to keep iou <= 1
    inter = min(iw * ih, a.area, b.area)
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class CategoryTable:
    """The 9 fixed classes; ids 0..8 in frozen taxonomy order."""

    entries: tuple[tuple[int, str], ...] = tuple(enumerate(CATEGORY_NAMES))

    def __post_init__(self):
        expected = tuple(enumerate(CATEGORY_NAMES))
        if tuple(self.entries) != expected:
            raise ValidationError(
                f"category table must be exactly {expected}, got {tuple(self.entries)!r}"
            )

    def __len__(self) -> int:
        return len(self.entries)

    def name_of(self, category_id: int) -> str:
        return CATEGORY_NAMES[category_id]

    def id_of(self, name: str) -> int:
        return CATEGORY_NAMES.index(name)

    @property
    def names(self) -> tuple[str, ...]:
        return CATEGORY_NAMES


@dataclass(frozen=True)
class ImageRecord:
    """One manuscript page; page_index is its position in reading order."""

    id: int
    file_name: str
    width: int
    height: int
    page_index: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"image {self.id}: dimensions must be positive, got {self.width}x{self.height}"
            )
        if self.page_index < 0:
            raise ValidationError(f"image {self.id}: page_index must be >= 0")


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    source: str

    def __post_init__(self):
        if not 0 <= self.category_id < len(CATEGORY_NAMES):
            raise ValidationError(
                f"annotation {self.id}: category_id {self.category_id} outside 0..8"
            )
        if self.source not in SOURCES:
            raise ValidationError(f"annotation {self.id}: unknown source {self.source!r}")


@dataclass(frozen=True)
class Detection:
    """A predicted box with class and confidence."""

    image_id: int
    category_id: int
    bbox: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score {self.score} outside [0, 1]")
        if not 0 <= self.category_id < len(CATEGORY_NAMES):
            raise ValidationError(f"detection category_id {self.category_id} outside 0..8")


@dataclass(frozen=True)
class DatasetCOCO:
    """Images + annotations + the fixed category table, with referential integrity."""

    images: tuple[ImageRecord, ...]
    annotations: tuple[Annotation, ...]
    categories: CategoryTable = field(default_factory=CategoryTable)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        image_ids = [img.id for img in self.images]
        if len(set(image_ids)) != len(image_ids):
            raise ValidationError("duplicate image ids")
        pages = [img.page_index for img in self.images]
        if len(set(pages)) != len(pages):
            raise ValidationError("duplicate page_index values")
        ann_ids = [a.id for a in self.annotations]
        if len(set(ann_ids)) != len(ann_ids):
            raise ValidationError("duplicate annotation ids")
        known = set(image_ids)
        for a in self.annotations:
            if a.image_id not in known:
                raise ValidationError(
                    f"annotation {a.id} references unknown image {a.image_id}"
                )

    def image_by_id(self, image_id: int) -> ImageRecord:
        for img in self.images:
            if img.id == image_id:
                return img
        raise KeyError(image_id)

    def annotations_of(self, image_id: int) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]

    def restrict(self, image_ids: set[int]) -> "DatasetCOCO":
        """Sub-dataset covering only the given images."""
        return DatasetCOCO(
            images=tuple(i for i in self.images if i.id in image_ids),
            annotations=tuple(a for a in self.annotations if a.image_id in image_ids),
            categories=self.categories,
        )


def yolo_line(ann: Annotation, img: ImageRecord) -> str:
    """One YOLO label line: class id plus center-normalized geometry, 6 decimals."""
    if ann.image_id != img.id:
        raise ValidationError(
            f"annotation {ann.id} belongs to image {ann.image_id}, not {img.id}"
        )
    cx = (ann.bbox.x + ann.bbox.w / 2.0) / img.width
    cy = (ann.bbox.y + ann.bbox.h / 2.0) / img.height
    w = ann.bbox.w / img.width
    h = ann.bbox.h / img.height
    edges = (
        ("left", ann.bbox.x / img.width),
        ("right", ann.bbox.x2 / img.width),
        ("top", ann.bbox.y / img.height),
        ("bottom", ann.bbox.y2 / img.height),
    )
    for name, v in edges:
        if not 0.0 <= v <= 1.0:
            raise FormatError(
                f"annotation {ann.id}: normalized {name} edge {v} outside [0, 1] "
                f"(bbox exceeds image {img.id} bounds; clamp at load missed it)"
            )
    return f"{ann.category_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"
