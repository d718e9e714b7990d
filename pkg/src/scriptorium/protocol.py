"""Newline-delimited JSON wire protocol between the harness and a detector.

One JSON object per line over the subprocess's stdin/stdout. Requests:
``hello`` (capability handshake), ``train``, ``predict``, ``shutdown``.
Replies: ``{"ok": true, "batch": bool}``, ``{"ok": true, "cmd": "trained"}``,
``{"ok": true, "cmd": "predictions", "items": [...]}`` or
``{"ok": false, "error": "..."}``. Image entries carry id, file_name,
width, height; detection bboxes are absolute-pixel ``[x, y, w, h]``.
"""

from __future__ import annotations

import json
import math
from typing import Any

from scriptorium.core import CATEGORY_NAMES, ImageRecord
from scriptorium.errors import ProtocolError

REQUEST_CMDS = ("hello", "train", "predict", "shutdown")


def image_entry(img: ImageRecord, root: str | None = None) -> dict:
    file_name = img.file_name if root is None else f"{root.rstrip('/')}/{img.file_name}"
    return {"id": img.id, "file_name": file_name, "width": img.width, "height": img.height}


def dump_message(msg: dict) -> str:
    """One compact line; raises on non-serializable content."""
    try:
        return json.dumps(msg, allow_nan=False, separators=(",", ":"))
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"unserializable message: {exc}") from exc


def parse_message(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not a JSON line: {line[:120]!r} ({exc.msg})") from exc
    if not isinstance(msg, dict):
        raise ProtocolError(f"message must be a JSON object, got {type(msg).__name__}")
    return msg


def _require(msg: dict, key: str, types: tuple[type, ...], where: str) -> Any:
    if key not in msg:
        raise ProtocolError(f"{where}: missing key {key!r} in {msg!r}")
    value = msg[key]
    if not isinstance(value, types):
        raise ProtocolError(f"{where}: key {key!r} has type {type(value).__name__}")
    return value


def _validate_images(images: Any, where: str) -> None:
    if not isinstance(images, list):
        raise ProtocolError(f"{where}: images must be a list")
    for entry in images:
        if not isinstance(entry, dict):
            raise ProtocolError(f"{where}: image entry {entry!r} is not an object")
        _require(entry, "id", (int,), where)
        _require(entry, "file_name", (str,), where)
        _require(entry, "width", (int,), where)
        _require(entry, "height", (int,), where)


def validate_detection_record(rec: Any) -> None:
    """Structural check on one wire detection; names the offender on failure."""
    if not isinstance(rec, dict):
        raise ProtocolError(f"detection {rec!r} is not an object")
    cat = _require(rec, "category_id", (int,), "detection")
    if not 0 <= cat < len(CATEGORY_NAMES):
        raise ProtocolError(f"unknown category in detection record {rec!r}")
    score = _require(rec, "score", (int, float), "detection")
    if isinstance(score, bool) or not math.isfinite(score) or not 0.0 <= score <= 1.0:
        raise ProtocolError(f"score outside [0, 1] in detection record {rec!r}")
    bbox = _require(rec, "bbox", (list,), "detection")
    if len(bbox) != 4 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
        for v in bbox
    ):
        raise ProtocolError(f"bbox must be 4 finite numbers in detection record {rec!r}")
    if bbox[2] <= 0 or bbox[3] <= 0:
        raise ProtocolError(f"bbox has non-positive size in detection record {rec!r}")


def validate_message(msg: dict) -> None:
    """Validate either direction; raises ProtocolError on any violation."""
    if "cmd" in msg and "ok" not in msg:
        cmd = msg["cmd"]
        if cmd not in REQUEST_CMDS:
            raise ProtocolError(f"unknown request cmd {cmd!r}")
        if cmd == "train":
            _validate_images(msg.get("images"), "train")
            _require(msg, "labels_dir", (str,), "train")
            _require(msg, "workdir", (str,), "train")
            _require(msg, "warm_start", (bool,), "train")
        elif cmd == "predict":
            _validate_images(msg.get("images"), "predict")
        return
    if "ok" in msg:
        ok = _require(msg, "ok", (bool,), "reply")
        if not ok:
            _require(msg, "error", (str,), "reply")
            return
        if "batch" in msg:  # handshake reply
            _require(msg, "batch", (bool,), "handshake")
            return
        cmd = _require(msg, "cmd", (str,), "reply")
        if cmd == "trained":
            return
        if cmd == "predictions":
            items = _require(msg, "items", (list,), "predictions")
            for item in items:
                if not isinstance(item, dict):
                    raise ProtocolError(f"prediction item {item!r} is not an object")
                _require(item, "image_id", (int,), "predictions")
                dets = _require(item, "detections", (list,), "predictions")
                for rec in dets:
                    validate_detection_record(rec)
            return
        raise ProtocolError(f"unknown reply cmd {cmd!r}")
    raise ProtocolError(f"message is neither request nor reply: {msg!r}")
