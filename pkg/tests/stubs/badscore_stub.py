"""Detector that violates the protocol: emits a score above 1."""

import json
import sys

for line in sys.stdin:
    msg = json.loads(line)
    cmd = msg.get("cmd")
    if cmd == "hello":
        sys.stdout.write(json.dumps({"ok": True, "batch": False}) + "\n")
    elif cmd == "train":
        sys.stdout.write(json.dumps({"ok": True, "cmd": "trained"}) + "\n")
    elif cmd == "predict":
        items = [
            {
                "image_id": img["id"],
                "detections": [
                    {"category_id": 0, "bbox": [1.0, 1.0, 5.0, 5.0], "score": 2.0}
                ],
            }
            for img in msg["images"]
        ]
        sys.stdout.write(
            json.dumps({"ok": True, "cmd": "predictions", "items": items}) + "\n"
        )
    elif cmd == "shutdown":
        break
    sys.stdout.flush()
