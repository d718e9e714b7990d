"""Minimal protocol-conformant detector: acks training, predicts nothing."""

import json
import sys


def main():
    for line in sys.stdin:
        msg = json.loads(line)
        cmd = msg.get("cmd")
        if cmd == "hello":
            reply = {"ok": True, "batch": True}
        elif cmd == "train":
            reply = {"ok": True, "cmd": "trained"}
        elif cmd == "predict":
            reply = {
                "ok": True,
                "cmd": "predictions",
                "items": [
                    {"image_id": img["id"], "detections": []} for img in msg["images"]
                ],
            }
        elif cmd == "shutdown":
            return
        else:
            reply = {"ok": False, "error": f"unknown cmd {cmd!r}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
