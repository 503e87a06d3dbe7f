"""Uniform black-box classifier access.

A ClassifierHandle wraps one of three transports: an in-process reference
classifier, an external process speaking newline-delimited JSON over
stdin/stdout, or an HTTP endpoint receiving the same messages via POST
/predict. Reference classifiers (constant, mean-color, class-probe, planted
oracle) make the whole pipeline verifiable without any trained model.

Wire protocol, one UTF-8 JSON document per line:
    handshake  {"op": "hello"}
            -> {"name": str, "num_classes": int, "input_h": int, "input_w": int}
    predict    {"id": int, "op": "predict",
                "images": [{"h": int, "w": int, "rgb_b64": base64 RGB8}, ...]}
            -> {"id": int, "probs": [[float, ...], ...]}
    failure    {"id": int, "error": str}
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BridgeError,
    BridgeProtocolError,
    BridgeTimeout,
    BridgeTransportError,
    InvalidParam,
    IoError,
    NormalizationError,
)
from .image import Image, to_rgb8
from .segmentation import Segmentation

__all__ = [
    "ClassifierHandle",
    "predict_batch",
    "make_constant_classifier",
    "make_planted_oracle",
    "make_mean_color_classifier",
    "make_class_probe_classifier",
    "SubprocessTransport",
    "HttpTransport",
    "load_classifier_config",
    "open_classifier",
]

DEFAULT_TIMEOUT_S = 30.0

# Matched per-pixel within this tolerance, "unchanged" means every channel is
# closer than half an 8-bit quantization step plus margin, so the oracle also
# works across the byte-quantizing wire.
PIXEL_MATCH_ATOL = 2.0 / 255.0


@dataclass
class ClassifierHandle:
    """One black-box classifier plus its batch-call capabilities."""

    name: str
    num_classes: int
    input_size: tuple[int, int] | None
    transport: object  # anything with predict(list[Image]) -> ndarray
    parallel_batches: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def close(self) -> None:
        close = getattr(self.transport, "close", None)
        if close is not None:
            close()

    def __enter__(self) -> "ClassifierHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def predict_batch(handle: ClassifierHandle, images: Sequence[Image]) -> np.ndarray:
    """Query the classifier on a batch; rows are order-preserving.

    Validates the probability contract: one row per image, each summing to 1
    within 1e-4 (NormalizationError otherwise).
    """
    if len(images) == 0:
        raise InvalidParam("images must be non-empty")
    if handle.parallel_batches:
        probs = handle.transport.predict(list(images))
    else:
        with handle._lock:
            probs = handle.transport.predict(list(images))
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (len(images), handle.num_classes):
        raise BridgeProtocolError(
            f"expected {(len(images), handle.num_classes)} probabilities, got {probs.shape}"
        )
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-4
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NormalizationError(f"probability row {i} sums to {sums[i]:.6f}")
    return probs


class _InProcessTransport:
    def __init__(self, fn: Callable[[list[Image]], np.ndarray]):
        self._fn = fn

    def predict(self, images: list[Image]) -> np.ndarray:
        return self._fn(images)


def make_constant_classifier(num_classes: int, name: str = "constant") -> ClassifierHandle:
    """Uniform 1/C output regardless of input; the degenerate reference."""
    if num_classes < 2:
        raise InvalidParam(f"num_classes must be >= 2, got {num_classes}")

    def fn(images: list[Image]) -> np.ndarray:
        return np.full((len(images), num_classes), 1.0 / num_classes)

    return ClassifierHandle(name, num_classes, None, _InProcessTransport(fn), True)


def make_planted_oracle(
    seg: Segmentation,
    planted_segments,
    target_class: int,
    num_classes: int,
    p_on: float = 0.9,
    p_off: float = 0.1,
    slope: str = "positive",
    original: Image | None = None,
) -> ClassifierHandle:
    """Classifier whose target probability depends only on planted segments.

    The target-class probability interpolates p_off -> p_on with the fraction
    of planted-segment pixels left unmasked, detected by comparing input
    pixels against the stored original image, so the oracle stays a true
    black box to the explainer. slope="negative" flips the interpolation
    (intact regions push the probability down), matching a region that
    argues against the class. Remaining mass is uniform over other classes.
    """
    planted = sorted(int(s) for s in planted_segments)
    if num_classes < 2:
        raise InvalidParam(f"num_classes must be >= 2, got {num_classes}")
    if not 0 <= target_class < num_classes:
        raise InvalidParam(f"target_class {target_class} out of range")
    if not planted or any(s < 0 or s >= seg.num_segments for s in planted):
        raise InvalidParam("planted_segments must be a non-empty subset of [0, k)")
    if not 0 <= p_off < p_on <= 1:
        raise InvalidParam(f"need 0 <= p_off < p_on <= 1, got {p_off}, {p_on}")
    if slope not in ("positive", "negative"):
        raise InvalidParam(f"slope must be 'positive' or 'negative', got {slope!r}")
    if original is None:
        raise InvalidParam("the oracle needs the original image to detect masking")

    member = np.isin(seg.labels, planted)
    total = int(member.sum())
    ref = original.pixels
    # Only planted-segment pixels influence the output, so only they are
    # compared against the stored original.
    yy, xx = np.nonzero(member)
    ref_member = ref[yy, xx]

    def fn(images: list[Image]) -> np.ndarray:
        for im in images:
            if im.pixels.shape != ref.shape:
                raise InvalidParam(
                    f"oracle expects {ref.shape[:2]} images, got {im.pixels.shape[:2]}"
                )
        got = np.stack([im.pixels[yy, xx] for im in images])  # (b, |member|, 3)
        same = np.all(np.abs(got - ref_member) <= PIXEL_MATCH_ATOL, axis=2)
        frac = same.sum(axis=1) / total
        if slope == "positive":
            p = p_off + (p_on - p_off) * frac
        else:
            p = p_on - (p_on - p_off) * frac
        out = np.repeat(((1.0 - p) / (num_classes - 1))[:, None], num_classes, axis=1)
        out[:, target_class] = p
        return out

    return ClassifierHandle(
        f"planted-oracle[{slope}]", num_classes, None, _InProcessTransport(fn), True
    )


def make_mean_color_classifier(
    weights, bias=None, name: str = "mean-color"
) -> ClassifierHandle:
    """Softmax over affine functions of the image's mean RGB vector."""
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != 3 or W.shape[0] < 2:
        raise InvalidParam(f"weights must be (C >= 2, 3), got {W.shape}")
    b = np.zeros(W.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)

    def fn(images: list[Image]) -> np.ndarray:
        feats = np.stack([im.pixels.reshape(-1, 3).mean(axis=0) for im in images])
        logits = feats @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    return ClassifierHandle(name, W.shape[0], None, _InProcessTransport(fn), True)


def make_class_probe_classifier(
    num_classes: int, confidence: float = 1.0, name: str = "class-probe"
) -> ClassifierHandle:
    """Decodes the class index encoded in the mean red channel.

    Pairs with fixture images whose red channel equals (c + 0.5) / C; with
    confidence 1.0 this is a perfect classifier on such data. Constant-color
    images survive resizing, so the probe is robust to the engine's
    resolution choice.
    """
    if num_classes < 2:
        raise InvalidParam(f"num_classes must be >= 2, got {num_classes}")
    if not 0 < confidence <= 1:
        raise InvalidParam(f"confidence must be in (0, 1], got {confidence}")

    def fn(images: list[Image]) -> np.ndarray:
        out = np.empty((len(images), num_classes))
        rest = (1.0 - confidence) / (num_classes - 1)
        for i, im in enumerate(images):
            c = int(im.pixels[:, :, 0].mean() * num_classes)
            c = min(max(c, 0), num_classes - 1)
            out[i] = rest
            out[i, c] = confidence
        return out

    return ClassifierHandle(name, num_classes, None, _InProcessTransport(fn), True)


def _encode_images(images: list[Image]) -> list[dict]:
    return [
        {
            "h": im.height,
            "w": im.width,
            "rgb_b64": base64.b64encode(to_rgb8(im)).decode("ascii"),
        }
        for im in images
    ]


class SubprocessTransport:
    """Line-protocol client for an adapter child process."""

    def __init__(self, command: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.timeout_s = timeout_s
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeTransportError(f"cannot spawn {command!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 0
        self.hello = self.request({"op": "hello"})
        for key in ("name", "num_classes", "input_h", "input_w"):
            if key not in self.hello:
                raise BridgeProtocolError(f"hello response missing {key!r}: {self.hello}")

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def request(self, obj: dict) -> dict:
        """Send one message and decode one response line (test hooks use this
        directly for extension ops such as checksums)."""
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BridgeTransportError(f"adapter pipe closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise BridgeTimeout(f"no response within {self.timeout_s} s") from None
        if line is None:
            raise BridgeTransportError("adapter exited before responding")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"malformed response line {line!r}: {exc}") from exc
        if "error" in reply:
            raise BridgeError(f"adapter error: {reply['error']}")
        if "id" in obj and reply.get("id") != obj["id"]:
            raise BridgeProtocolError(
                f"response id {reply.get('id')!r} does not match request id {obj['id']}"
            )
        return reply

    def predict(self, images: list[Image]) -> np.ndarray:
        self._next_id += 1
        reply = self.request(
            {"id": self._next_id, "op": "predict", "images": _encode_images(images)}
        )
        if "probs" not in reply:
            raise BridgeProtocolError(f"predict response missing 'probs': {reply}")
        return np.asarray(reply["probs"], dtype=np.float64)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class HttpTransport:
    """Same messages as the subprocess protocol, POSTed to /predict."""

    def __init__(self, url: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.url = url.rstrip("/")
        self.timeout_s = timeout_s
        self._next_id = 0
        self.hello = self.request({"op": "hello"})

    def request(self, obj: dict) -> dict:
        data = json.dumps(obj).encode("utf-8")
        req = urllib.request.Request(
            self.url + "/predict", data=data, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                body = resp.read().decode("utf-8")
        except urllib.error.URLError as exc:
            if isinstance(getattr(exc, "reason", None), TimeoutError):
                raise BridgeTimeout(f"no response within {self.timeout_s} s") from exc
            raise BridgeTransportError(f"endpoint failure: {exc}") from exc
        except TimeoutError as exc:
            raise BridgeTimeout(f"no response within {self.timeout_s} s") from exc
        try:
            reply = json.loads(body)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"malformed response body {body!r}: {exc}") from exc
        if "error" in reply:
            raise BridgeError(f"adapter error: {reply['error']}")
        if "id" in obj and reply.get("id") != obj["id"]:
            raise BridgeProtocolError(
                f"response id {reply.get('id')!r} does not match request id {obj['id']}"
            )
        return reply

    def predict(self, images: list[Image]) -> np.ndarray:
        self._next_id += 1
        reply = self.request(
            {"id": self._next_id, "op": "predict", "images": _encode_images(images)}
        )
        if "probs" not in reply:
            raise BridgeProtocolError(f"predict response missing 'probs': {reply}")
        return np.asarray(reply["probs"], dtype=np.float64)


def load_classifier_config(path, section: str | None = None) -> dict:
    """Read a model section from a TOML file.

    With no section name the file's top level is the config; otherwise the
    named table (searched at top level, then under [models]).
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    try:
        with open(Path(path), "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read model config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise IoError(f"invalid TOML in {path}: {exc}") from exc
    if section is None:
        return doc
    if section in doc and isinstance(doc[section], dict):
        return doc[section]
    models = doc.get("models", {})
    if section in models:
        return models[section]
    raise IoError(f"no model section {section!r} in {path}")


def open_classifier(config: dict) -> ClassifierHandle:
    """Build a handle from a TOML-sourced config dict.

    Supported types: subprocess {command}, http {url}, constant {classes},
    class-probe {classes, confidence}, mean-color {weights, bias}. subprocess
    and http accept timeout_s and parallel_batches.
    """
    kind = config.get("type")
    timeout = float(config.get("timeout_s", DEFAULT_TIMEOUT_S))
    if kind == "subprocess":
        transport = SubprocessTransport(config["command"], timeout)
    elif kind == "http":
        transport = HttpTransport(config["url"], timeout)
    elif kind == "constant":
        return make_constant_classifier(int(config["classes"]))
    elif kind == "class-probe":
        return make_class_probe_classifier(
            int(config["classes"]), float(config.get("confidence", 1.0))
        )
    elif kind == "mean-color":
        return make_mean_color_classifier(config["weights"], config.get("bias"))
    else:
        raise InvalidParam(f"unknown classifier type {kind!r}")
    hello = transport.hello
    return ClassifierHandle(
        name=str(hello["name"]),
        num_classes=int(hello["num_classes"]),
        input_size=(int(hello["input_h"]), int(hello["input_w"])),
        transport=transport,
        parallel_batches=bool(config.get("parallel_batches", False)),
    )
