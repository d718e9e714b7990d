"""Three-source annotation fusion: PageXML + MEI + SVG into one dataset.

Per page, SVG rectangles are matched one-to-one against MEI zones (the SVG
geometry corrects the zone, the MEI element kind names the class), PageXML
staff regions are matched against MEI staff zones so each physical staff
yields a single annotation, and everything left over is carried through.
Kinds map to the fixed category table: label hint first, element kind
second, anything unknown lands in ``discard``.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scriptorium import kernels
from scriptorium.core import (
    CATEGORY_NAMES,
    Annotation,
    BBox,
    CategoryTable,
    DatasetCOCO,
    ImageRecord,
    clamp_box,
)
from scriptorium.errors import ParseError, ValidationError

log = logging.getLogger(__name__)

XML_ID = "{http://www.w3.org/XML/1998/namespace}id"

DEFAULT_KIND_MAP: dict[str, str] = {
    "zone/neume": "neume",
    "TextLine": "line",
    "zone/clef": "clef",
    "zone/staff": "staff",
    "tetragram": "staff",
    "zone/divLine": "musicDelimiter",
    "TextRegion": "text",
    "zone/custos": "custos",
    "MusicTextRegion": "musicText",
}


@dataclass(frozen=True)
class SourceObject:
    source: str  # pagexml | mei | svg
    kind: str
    bbox: BBox
    native_id: str
    label_hint: str = ""


@dataclass
class ParseOutcome:
    objects: list[SourceObject]
    warnings: int = 0


@dataclass
class MatchReport:
    """Greedy one-to-one matching result; pairs in acceptance order."""

    pairs: list[tuple[str, str, float]] = field(default_factory=list)
    unmatched_left: list[str] = field(default_factory=list)
    unmatched_right: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pairs": [[l, r, i] for l, r, i in self.pairs],
            "unmatched_left": self.unmatched_left,
            "unmatched_right": self.unmatched_right,
        }


@dataclass
class MergeConfig:
    min_iou: float = 0.25
    kind_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_KIND_MAP))

    def __post_init__(self):
        if not 0.0 < self.min_iou <= 1.0:
            raise ValidationError(f"min_iou {self.min_iou} outside (0, 1]")
        unknown = set(self.kind_map.values()) - set(CATEGORY_NAMES)
        if unknown:
            raise ValidationError(f"kind map targets unknown categories {sorted(unknown)}")

    @classmethod
    def from_file(cls, path: str | Path) -> "MergeConfig":
        """JSON config; kind_map entries overlay the defaults."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        kind_map = dict(DEFAULT_KIND_MAP)
        kind_map.update(data.get("kind_map", {}))
        return cls(min_iou=data.get("min_iou", 0.25), kind_map=kind_map)


def category_for(obj: SourceObject, kind_map: dict[str, str]) -> int:
    """Category id from label hint first, then element kind, else discard."""
    name = kind_map.get(obj.label_hint) if obj.label_hint else None
    if name is None:
        name = kind_map.get(obj.kind, "discard")
    return CATEGORY_NAMES.index(name)


def _local(tag: str) -> str:
    return tag.rpartition("}")[2]


def _parse_xml(document: bytes, what: str) -> ET.Element:
    try:
        return ET.fromstring(document)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else None
        raise ParseError(f"malformed {what}: {exc.msg}", line=line) from exc


def _check_unique(objects: list[SourceObject], what: str) -> None:
    seen: set[str] = set()
    for obj in objects:
        if obj.native_id in seen:
            raise ValidationError(f"{what}: duplicate native id {obj.native_id!r}")
        seen.add(obj.native_id)


def parse_pagexml(document: bytes) -> ParseOutcome:
    """Regions and text lines with their polygon hulls as boxes."""
    root = _parse_xml(document, "PageXML")
    outcome = ParseOutcome(objects=[])
    counter = 0
    for elem in root.iter():
        kind = _local(elem.tag)
        if kind != "TextLine" and not kind.endswith("Region"):
            continue
        counter += 1
        coords = next((c for c in elem if _local(c.tag) == "Coords"), None)
        points_attr = coords.get("points", "") if coords is not None else ""
        points = []
        for token in points_attr.split():
            xy = token.split(",")
            if len(xy) != 2:
                raise ParseError(f"PageXML: bad point {token!r} in {kind}")
            try:
                points.append((float(xy[0]), float(xy[1])))
            except ValueError as exc:
                raise ParseError(f"PageXML: bad point {token!r} in {kind}") from exc
        if len(points) < 3:
            outcome.warnings += 1
            log.warning("PageXML: %s with %d points skipped", kind, len(points))
            continue
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        w, h = max(xs) - min(xs), max(ys) - min(ys)
        if w <= 0 or h <= 0:
            outcome.warnings += 1
            log.warning("PageXML: %s has a degenerate hull, skipped", kind)
            continue
        outcome.objects.append(
            SourceObject(
                source="pagexml",
                kind=kind,
                bbox=BBox(min(xs), min(ys), w, h),
                native_id=elem.get("id", f"{kind}#{counter}"),
                label_hint=elem.get("type", ""),
            )
        )
    _check_unique(outcome.objects, "PageXML")
    return outcome


def parse_mei(document: bytes) -> ParseOutcome:
    """Facsimile zones joined to the music elements referencing them."""
    root = _parse_xml(document, "MEI")
    outcome = ParseOutcome(objects=[])

    zones: dict[str, BBox | None] = {}
    for elem in root.iter():
        if _local(elem.tag) != "zone":
            continue
        zone_id = elem.get(XML_ID) or elem.get("id")
        if zone_id is None:
            outcome.warnings += 1
            log.warning("MEI: zone without xml:id skipped")
            continue
        try:
            ulx, uly = int(elem.get("ulx")), int(elem.get("uly"))
            lrx, lry = int(elem.get("lrx")), int(elem.get("lry"))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"MEI: zone {zone_id!r} has bad corner attributes") from exc
        if lrx <= ulx or lry <= uly:
            outcome.warnings += 1
            log.warning("MEI: degenerate zone %s skipped", zone_id)
            zones[zone_id] = None
            continue
        zones[zone_id] = BBox(float(ulx), float(uly), float(lrx - ulx), float(lry - uly))

    referenced: set[str] = set()
    counter = 0
    for elem in root.iter():
        kind = _local(elem.tag)
        if kind == "zone":
            continue
        facs = elem.get("facs")
        if not facs:
            continue
        counter += 1
        ref = facs.split()[0].lstrip("#")
        if ref not in zones:
            outcome.warnings += 1
            log.warning("MEI: dangling facs reference %r on %s skipped", facs, kind)
            continue
        referenced.add(ref)
        box = zones[ref]
        if box is None:  # degenerate zone already counted
            continue
        outcome.objects.append(
            SourceObject(
                source="mei",
                kind=f"zone/{kind}",
                bbox=box,
                native_id=elem.get(XML_ID) or elem.get("id") or f"{kind}#{counter}",
                label_hint="",
            )
        )

    for zone_id, box in zones.items():
        if zone_id in referenced or box is None:
            continue
        outcome.objects.append(
            SourceObject(
                source="mei", kind="zone/orphan", bbox=box, native_id=zone_id
            )
        )
    _check_unique(outcome.objects, "MEI")
    return outcome


def _svg_collect(elem, transformed: bool, outcome: ParseOutcome, counter: list[int]) -> None:
    transformed = transformed or elem.get("transform") is not None
    if _local(elem.tag) == "rect":
        if transformed:
            raise ParseError(
                f"SVG: rect {elem.get('id', counter[0])!r} is under a transform; "
                "flatten transforms upstream"
            )
        counter[0] += 1
        try:
            x = float(elem.get("x", 0))
            y = float(elem.get("y", 0))
            w = float(elem.get("width", 0))
            h = float(elem.get("height", 0))
        except ValueError as exc:
            raise ParseError(f"SVG: rect with non-numeric geometry: {exc}") from exc
        if w <= 0 or h <= 0:
            outcome.warnings += 1
            log.warning("SVG: degenerate rect skipped")
            return
        label = elem.get("class") or elem.get("label") or ""
        outcome.objects.append(
            SourceObject(
                source="svg",
                kind="rect",
                bbox=BBox(x, y, w, h),
                native_id=elem.get("id", f"rect#{counter[0]}"),
                label_hint=label,
            )
        )
        return
    for child in elem:
        _svg_collect(child, transformed, outcome, counter)


def parse_svg_rects(document: bytes) -> ParseOutcome:
    """Rect elements taken verbatim; anything else is ignored."""
    root = _parse_xml(document, "SVG")
    outcome = ParseOutcome(objects=[])
    _svg_collect(root, False, outcome, [0])
    _check_unique(outcome.objects, "SVG")
    return outcome


def match_boxes(
    left: list[SourceObject], right: list[SourceObject], min_iou: float
) -> MatchReport:
    """Greedy one-to-one matching by descending IoU.

    Ties break on (left native id, right native id); leftovers are reported
    unmatched, sorted by native id.
    """
    if not 0.0 < min_iou <= 1.0:
        raise ValidationError(f"min_iou {min_iou} outside (0, 1]")
    report = MatchReport()
    if left and right:
        lb = np.array([[o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h] for o in left])
        rb = np.array([[o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h] for o in right])
        ious = kernels.iou_matrix(lb, rb)
        candidates = [
            (-ious[i, j], left[i].native_id, right[j].native_id, i, j)
            for i in range(len(left))
            for j in range(len(right))
            if ious[i, j] >= min_iou
        ]
        candidates.sort()
        used_l: set[int] = set()
        used_r: set[int] = set()
        for neg_iou, lid, rid, i, j in candidates:
            if i in used_l or j in used_r:
                continue
            used_l.add(i)
            used_r.add(j)
            report.pairs.append((lid, rid, -neg_iou))
        report.unmatched_left = sorted(
            o.native_id for i, o in enumerate(left) if i not in used_l
        )
        report.unmatched_right = sorted(
            o.native_id for j, o in enumerate(right) if j not in used_r
        )
    else:
        report.unmatched_left = sorted(o.native_id for o in left)
        report.unmatched_right = sorted(o.native_id for o in right)
    return report


@dataclass
class PageMergeReport:
    svg_mei: MatchReport
    pagexml_staff: MatchReport
    inputs: dict[str, int]
    annotations: int = 0
    matched_partners: int = 0
    clamped: int = 0
    rejected: int = 0
    empty_page: bool = False

    def to_dict(self) -> dict:
        return {
            "svg_mei": self.svg_mei.to_dict(),
            "pagexml_staff": self.pagexml_staff.to_dict(),
            "inputs": self.inputs,
            "annotations": self.annotations,
            "matched_partners": self.matched_partners,
            "clamped": self.clamped,
            "rejected": self.rejected,
            "empty_page": self.empty_page,
        }


def merge_sources(
    pagexml_docs: dict[int, list[SourceObject]],
    mei_docs: dict[int, list[SourceObject]],
    svg_docs: dict[int, list[SourceObject]],
    images: list[ImageRecord],
    config: MergeConfig,
) -> tuple[DatasetCOCO, dict[int, PageMergeReport]]:
    """Fuse per-page source objects (keyed by image id) into one dataset."""
    staff_id = CATEGORY_NAMES.index("staff")
    annotations: list[Annotation] = []
    reports: dict[int, PageMergeReport] = {}
    next_ann_id = 1

    for img in sorted(images, key=lambda i: i.page_index):
        pagexml = pagexml_docs.get(img.id, [])
        mei = mei_docs.get(img.id, [])
        svg = svg_docs.get(img.id, [])

        svg_mei = match_boxes(svg, mei, config.min_iou)
        px_staff = [p for p in pagexml if category_for(p, config.kind_map) == staff_id]
        mei_staff = [m for m in mei if category_for(m, config.kind_map) == staff_id]
        staff_match = match_boxes(px_staff, mei_staff, config.min_iou)

        report = PageMergeReport(
            svg_mei=svg_mei,
            pagexml_staff=staff_match,
            inputs={"pagexml": len(pagexml), "mei": len(mei), "svg": len(svg)},
        )
        if not (pagexml or mei or svg):
            report.empty_page = True
            log.warning("page %s (image %d): no objects from any source", img.file_name, img.id)

        svg_by_id = {o.native_id: o for o in svg}
        px_by_id = {o.native_id: o for o in pagexml}
        svg_partner = {mid: svg_by_id[sid] for sid, mid, _ in svg_mei.pairs}
        px_partner = {mid: px_by_id[pid] for pid, mid, _ in staff_match.pairs}
        consumed_px = {pid for pid, _, _ in staff_match.pairs}

        # (bbox, kind-bearing object, provenance) in deterministic order
        keep: list[tuple[BBox, SourceObject, str]] = []
        for m in sorted(mei, key=lambda o: o.native_id):
            if m.native_id in svg_partner:
                keep.append((svg_partner[m.native_id].bbox, m, "merged"))
                report.matched_partners += 1
                if m.native_id in px_partner:  # staff known to all three sources
                    report.matched_partners += 1
            elif m.native_id in px_partner:
                keep.append((px_partner[m.native_id].bbox, m, "merged"))
                report.matched_partners += 1
            else:
                keep.append((m.bbox, m, "mei"))
        for s in sorted(svg, key=lambda o: o.native_id):
            if s.native_id not in {p[0] for p in svg_mei.pairs}:
                keep.append((s.bbox, s, "svg"))
        for p in sorted(pagexml, key=lambda o: o.native_id):
            if p.native_id not in consumed_px:
                keep.append((p.bbox, p, "pagexml"))

        for bbox, obj, provenance in keep:
            clamped = clamp_box(bbox.x, bbox.y, bbox.w, bbox.h, img.width, img.height)
            if clamped is None:
                report.rejected += 1
                log.warning("image %d: %s degenerates after clamping", img.id, obj.native_id)
                continue
            if clamped != bbox:
                report.clamped += 1
            annotations.append(
                Annotation(
                    id=next_ann_id,
                    image_id=img.id,
                    category_id=category_for(obj, config.kind_map),
                    bbox=clamped,
                    source=provenance,
                )
            )
            next_ann_id += 1
            report.annotations += 1

        reports[img.id] = report

    dataset = DatasetCOCO(tuple(images), tuple(annotations), CategoryTable())
    return dataset, reports


@dataclass(frozen=True)
class DatasetStats:
    counts: dict[str, int]
    total: int
    mean_per_image: float


def dataset_stats(ds: DatasetCOCO) -> DatasetStats:
    """Per-class annotation counts, their total, and the per-image mean."""
    counts = {name: 0 for name in CATEGORY_NAMES}
    for a in ds.annotations:
        counts[CATEGORY_NAMES[a.category_id]] += 1
    total = len(ds.annotations)
    mean = total / len(ds.images) if ds.images else 0.0
    return DatasetStats(counts=counts, total=total, mean_per_image=mean)


# ---------------------------------------------------------------------------
# directory-level driver (page association by shared file-name stem)

_PARSERS = {"pagexml": parse_pagexml, "mei": parse_mei, "svg": parse_svg_rects}


def _collect_dir(directory: str | Path | None, suffixes: tuple[str, ...]) -> dict[str, Path]:
    if directory is None:
        return {}
    files: dict[str, Path] = {}
    for path in sorted(Path(directory).iterdir()):
        if path.suffix.lower() in suffixes:
            if path.stem in files:
                raise ValidationError(f"{directory}: duplicate page stem {path.stem!r}")
            files[path.stem] = path
    return files


def load_and_merge(
    pagexml_dir: str | Path | None,
    mei_dir: str | Path | None,
    svg_dir: str | Path | None,
    images: list[ImageRecord],
    config: MergeConfig,
    jobs: int = 1,
) -> tuple[DatasetCOCO, dict]:
    """Parse per-page documents from three directories and merge them.

    Documents are associated to images by file-name stem. Returns the
    dataset plus a JSON-ready merge report with per-page match reports and
    warning tallies.
    """
    dirs = {
        "pagexml": _collect_dir(pagexml_dir, (".xml",)),
        "mei": _collect_dir(mei_dir, (".mei", ".xml")),
        "svg": _collect_dir(svg_dir, (".svg",)),
    }
    stems = {Path(img.file_name).stem: img for img in images}
    for source, files in dirs.items():
        orphans = sorted(set(files) - set(stems))
        if orphans:
            raise ValidationError(
                f"{source} documents without a manifest image: {orphans}"
            )

    def parse_page(args: tuple[str, str, Path]) -> tuple[str, str, ParseOutcome]:
        source, stem, path = args
        outcome = _PARSERS[source](path.read_bytes())
        return source, stem, outcome

    tasks = [
        (source, stem, path) for source, files in dirs.items() for stem, path in files.items()
    ]
    if jobs > 1 and tasks:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parsed = list(pool.map(parse_page, tasks))
    else:
        parsed = [parse_page(t) for t in tasks]

    per_source: dict[str, dict[int, list[SourceObject]]] = {s: {} for s in _PARSERS}
    parse_warnings: dict[str, int] = {s: 0 for s in _PARSERS}
    for source, stem, outcome in parsed:
        per_source[source][stems[stem].id] = outcome.objects
        parse_warnings[source] += outcome.warnings

    dataset, reports = merge_sources(
        per_source["pagexml"], per_source["mei"], per_source["svg"], images, config
    )
    stats = dataset_stats(dataset)
    report_doc = {
        "pages": {str(img_id): rep.to_dict() for img_id, rep in sorted(reports.items())},
        "parse_warnings": parse_warnings,
        "totals": {
            "images": len(images),
            "annotations": stats.total,
            "per_class": stats.counts,
            "mean_per_image": stats.mean_per_image,
            "matched_partners": sum(r.matched_partners for r in reports.values()),
            "clamped": sum(r.clamped for r in reports.values()),
            "rejected": sum(r.rejected for r in reports.values()),
            "empty_pages": sum(1 for r in reports.values() if r.empty_page),
        },
    }
    return dataset, report_doc


def read_image_manifest(path: str | Path) -> list[ImageRecord]:
    """JSON array of image records (id, file_name, width, height, page_index)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if isinstance(data, dict):
        data = data.get("images", data)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: manifest must be a JSON array of image records")
    try:
        return [
            ImageRecord(
                id=int(r["id"]),
                file_name=str(r["file_name"]),
                width=int(r["width"]),
                height=int(r["height"]),
                page_index=int(r["page_index"]),
            )
            for r in data
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: bad image record: {exc}") from exc
