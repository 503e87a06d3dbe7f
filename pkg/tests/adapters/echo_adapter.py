"""Minimal wire-protocol adapter used by the bridge tests.

Serves uniform probabilities over --classes classes and supports a test-only
"checksum" op returning the sha256 of the concatenated image bytes, which
lets tests verify byte-exact round trips. Failure modes for the error-path
tests are selected with --mode:

    ok         normal behavior
    garbage    emits a non-JSON line in place of the first predict reply
    wrong-id   replies to predicts with id+1
    error      replies to predicts with an error message
    hang       never replies to predicts
"""

import argparse
import base64
import hashlib
import json
import sys
import time


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--input-size", type=int, default=62)
    ap.add_argument("--mode", default="ok")
    ap.add_argument("--name", default="echo-adapter")
    args = ap.parse_args()

    first_predict = True
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            sys.stdout.write(json.dumps({"id": None, "error": "malformed request line"}) + "\n")
            sys.stdout.flush()
            continue
        op = req.get("op")
        if op == "hello":
            reply = {
                "name": args.name,
                "num_classes": args.classes,
                "input_h": args.input_size,
                "input_w": args.input_size,
            }
        elif op == "checksum":
            blob = b"".join(base64.b64decode(im["rgb_b64"]) for im in req["images"])
            reply = {"id": req["id"], "sha256": hashlib.sha256(blob).hexdigest()}
        elif op == "predict":
            if args.mode == "hang":
                time.sleep(3600)
            if args.mode == "garbage" and first_predict:
                first_predict = False
                sys.stdout.write("this is not json\n")
                sys.stdout.flush()
                continue
            if args.mode == "error":
                reply = {"id": req["id"], "error": "synthetic failure"}
            else:
                rid = req["id"] + 1 if args.mode == "wrong-id" else req["id"]
                p = 1.0 / args.classes
                reply = {"id": rid, "probs": [[p] * args.classes for _ in req["images"]]}
        else:
            reply = {"id": req.get("id"), "error": f"unknown op {op!r}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
