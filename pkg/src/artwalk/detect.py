"""Detector exchange types, a deterministic synthetic detector, and the stdio client.

The synthetic detector slides a window over the image and scores each
placement by normalized cross-correlation against a padded pedestrian
template (the window is larger than the template, so the surrounding
context ring influences the score). Objectness is a sigmoid of the score,
which keeps it continuous in the image pixels and therefore attackable by
query-based gradient estimation.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft as _fft

from .errors import (
    AdapterDeadError,
    AdapterError,
    AdapterProtocolError,
    AdapterRequestError,
    AdapterTimeoutError,
    InputError,
)
from .raster import Raster, decode_png, encode_png

OBJECTNESS_FLOOR = 0.01

DetectorFn = Callable[[Raster], "list[Detection]"]


@dataclass(frozen=True)
class Detection:
    """One proposal: top-left box, size, objectness, optional per-class scores."""

    x: float
    y: float
    w: float
    h: float
    objectness: float
    class_scores: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"detection box needs positive size, got {self.w}x{self.h}")
        if not (0.0 <= self.objectness <= 1.0):
            raise ValueError(f"objectness must be in [0, 1], got {self.objectness}")
        if self.class_scores is not None:
            scores = tuple(float(s) for s in self.class_scores)
            if any(not (0.0 <= s <= 1.0) for s in scores):
                raise ValueError(f"class scores must be in [0, 1], got {scores}")
            object.__setattr__(self, "class_scores", scores)

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "objectness": self.objectness,
            "class_scores": list(self.class_scores) if self.class_scores else None,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Detection":
        return cls(
            x=float(doc["x"]),
            y=float(doc["y"]),
            w=float(doc["w"]),
            h=float(doc["h"]),
            objectness=float(doc["objectness"]),
            class_scores=tuple(doc["class_scores"]) if doc.get("class_scores") else None,
        )


@dataclass(frozen=True, eq=False)
class DetectorConfig:
    """Synthetic detector parameters.

    template: RGBA pedestrian appearance; alpha > 0.5 marks the silhouette.
    window:   (w, h) scored area, template centered inside with a context ring.
    pad_value: padded-template fill; None uses the per-channel silhouette mean,
        which makes the correlation kernel zero outside the silhouette.
    var_floor: additive window-variance regularizer; bounds the score's
        sensitivity to any single pixel (see lipschitz_bound).
    """

    template: Raster
    window: tuple[int, int]
    stride: int = 1
    gain: float = 110.0
    threshold: float = 0.687
    nms_iou: float = 0.45
    pad_value: tuple[float, float, float] | None = None
    var_floor: float = 1e-4

    def __post_init__(self):
        if self.template.channels != 4:
            raise InputError("detector template must be RGBA (alpha = silhouette)")
        ww, wh = self.window
        if ww < self.template.width or wh < self.template.height:
            raise InputError(
                f"window {self.window} smaller than template "
                f"{self.template.width}x{self.template.height}"
            )
        if self.stride < 1:
            raise InputError("stride must be >= 1")
        if not (0.0 < self.nms_iou < 1.0):
            raise InputError("nms_iou must be in (0, 1)")
        if self.gain <= 0:
            raise InputError("gain must be positive")
        if not self.template.data[:, :, 3].any():
            raise InputError("template silhouette is empty")

    @property
    def template_offset(self) -> tuple[int, int]:
        """(ox, oy) of the template sub-area inside the window."""
        ww, wh = self.window
        return (ww - self.template.width) // 2, (wh - self.template.height) // 2


def default_pedestrian_template(width: int = 12, height: int = 26) -> Raster:
    """Procedural pedestrian: head, torso, legs on a transparent box."""
    rgb = np.zeros((height, width, 3))
    yy, xx = np.mgrid[0:height, 0:width]
    cx = width / 2.0 - 0.5
    head_r = width * 0.27
    head = (yy - head_r - 0.5) ** 2 + (xx - cx) ** 2 <= head_r ** 2
    rgb[head] = (0.85, 0.72, 0.62)
    torso_top = int(round(height * 0.27))
    torso_bot = int(round(height * 0.60))
    torso = (yy >= torso_top) & (yy <= torso_bot) & (np.abs(xx - cx) <= width * 0.30)
    rgb[torso] = (0.20, 0.35, 0.75)
    legs = (yy > torso_bot) & (
        (np.abs(xx - cx - width * 0.17) <= width * 0.10)
        | (np.abs(xx - cx + width * 0.17) <= width * 0.10)
    )
    rgb[legs] = (0.15, 0.15, 0.18)
    alpha = (head | torso | legs).astype(np.float64)
    return Raster(np.dstack([rgb, alpha]))


def tuned_detector_config() -> DetectorConfig:
    """Default config paired with the synthetic scene generator."""
    return DetectorConfig(
        template=default_pedestrian_template(),
        window=(26, 40),
        stride=1,
        gain=110.0,
        threshold=0.687,
        nms_iou=0.45,
    )


def _sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _kernel(cfg: DetectorConfig) -> np.ndarray:
    """Padded template minus its per-channel window mean: shape (wh, ww, 3)."""
    ww, wh = cfg.window
    ox, oy = cfg.template_offset
    tpl = cfg.template.data
    sil = tpl[:, :, 3] > 0.5
    if cfg.pad_value is None:
        pad = tpl[:, :, :3][sil].mean(axis=0)
    else:
        pad = np.asarray(cfg.pad_value, dtype=np.float64)
    padded = np.empty((wh, ww, 3), dtype=np.float64)
    padded[:, :] = pad
    sub = padded[oy : oy + cfg.template.height, ox : ox + cfg.template.width]
    sub[sil] = tpl[:, :, :3][sil]
    u = padded - padded.mean(axis=(0, 1))
    if float((u ** 2).sum()) <= 0.0:
        raise InputError("template has no contrast against its padding")
    return u


_fft_cache: dict[tuple[int, int, int], tuple[DetectorConfig, np.ndarray, float]] = {}


def _cached_kernel_fft(cfg: DetectorConfig, h: int, w: int):
    key = (id(cfg), h, w)
    entry = _fft_cache.get(key)
    if entry is not None and entry[0] is cfg:
        return entry[1], entry[2]
    kernel = _cached_kernel(cfg)
    kfft = np.conj(_fft.rfft2(kernel.transpose(2, 0, 1), s=(h, w)))
    su2 = float((kernel ** 2).sum())
    _fft_cache[key] = (cfg, kfft, su2)
    return kfft, su2


def _score_maps(images: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    """NCC scores for every valid window origin of a (n, h, w, 3) image stack."""
    n, h, w = images.shape[:3]
    ww, wh = cfg.window
    n_px = ww * wh

    kfft, su2 = _cached_kernel_fft(cfg, h, w)
    ifft = _fft.rfft2(images.transpose(0, 3, 1, 2), s=(h, w))
    cov = _fft.irfft2((ifft * kfft[None]).sum(axis=1), s=(h, w))[
        :, : h - wh + 1, : w - ww + 1
    ]

    ss = _window_sums_batch(np.einsum("nhwc,nhwc->nhw", images, images), wh, ww)
    for ch in range(3):
        s1 = _window_sums_batch(images[:, :, :, ch], wh, ww)
        ss -= s1 * s1 / n_px
    np.clip(ss, 0.0, None, out=ss)
    return cov / np.sqrt(su2 * (ss + cfg.var_floor))


def _window_sums_batch(arr: np.ndarray, wh: int, ww: int) -> np.ndarray:
    """Sliding-window sums over the last two axes of a (n, h, w) stack."""
    n, h, w = arr.shape
    ii = np.zeros((n, h + 1, w + 1), dtype=np.float64)
    ii[:, 1:, 1:] = arr.cumsum(axis=1).cumsum(axis=2)
    return ii[:, wh:, ww:] - ii[:, :-wh, ww:] - ii[:, wh:, :-ww] + ii[:, :-wh, :-ww]


def _nms(boxes: np.ndarray, scores: np.ndarray, iou_max: float) -> list[int]:
    """Greedy suppression, descending score, ties broken by smaller index.

    Kept boxes never overlap another kept box with IoU strictly above iou_max.
    """
    order = np.lexsort((np.arange(len(scores)), -scores))
    x1, y1 = boxes[:, 0], boxes[:, 1]
    x2, y2 = boxes[:, 0] + boxes[:, 2], boxes[:, 1] + boxes[:, 3]
    areas = boxes[:, 2] * boxes[:, 3]
    keep: list[int] = []
    alive = np.ones(len(scores), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        ix1 = np.maximum(x1[i], x1)
        iy1 = np.maximum(y1[i], y1)
        ix2 = np.minimum(x2[i], x2)
        iy2 = np.minimum(y2[i], y2)
        inter = np.maximum(ix2 - ix1, 0.0) * np.maximum(iy2 - iy1, 0.0)
        iou = inter / (areas[i] + areas - inter)
        alive &= iou <= iou_max
        alive[i] = False
    return keep


_kernel_cache: dict[int, tuple[DetectorConfig, np.ndarray]] = {}


def _cached_kernel(cfg: DetectorConfig) -> np.ndarray:
    entry = _kernel_cache.get(id(cfg))
    if entry is not None and entry[0] is cfg:
        return entry[1]
    k = _kernel(cfg)
    _kernel_cache[id(cfg)] = (cfg, k)
    return k


def synthetic_detect(image: Raster, cfg: DetectorConfig) -> list[Detection]:
    """Deterministic sliding-window template detector.

    Returns template-sized boxes after greedy NMS; windows with objectness
    at or below the proposal floor (0.01) are never reported. An image
    smaller than the window yields an empty list with a warning.
    """
    return detect_array(image.data, cfg)


def detect_array(data: np.ndarray, cfg: DetectorConfig) -> list[Detection]:
    """synthetic_detect on a bare (h, w, 3+) float array; fast path for loops."""
    return detect_arrays_batch([data], cfg)[0]


def detect_arrays_batch(stack: list[np.ndarray], cfg: DetectorConfig) -> list[list[Detection]]:
    """Score several same-size images through one FFT pass."""
    images = np.stack([a[:, :, :3] for a in stack])
    h, w = images.shape[1:3]
    ww, wh = cfg.window
    if h < wh or w < ww:
        warnings.warn(
            f"image {w}x{h} smaller than detector window {ww}x{wh}; no detections",
            stacklevel=2,
        )
        return [[] for _ in stack]
    scores = _score_maps(images, cfg)[:, :: cfg.stride, :: cfg.stride]
    obj = _sigmoid(cfg.gain * (scores - cfg.threshold))
    ox, oy = cfg.template_offset
    tw, th = cfg.template.width, cfg.template.height
    results = []
    for i in range(len(stack)):
        cy, cx = np.nonzero(obj[i] > OBJECTNESS_FLOOR)
        if len(cy) == 0:
            results.append([])
            continue
        boxes = np.stack(
            [
                cx * cfg.stride + ox,
                cy * cfg.stride + oy,
                np.full(len(cx), tw),
                np.full(len(cx), th),
            ],
            axis=1,
        ).astype(np.float64)
        confidences = obj[i][cy, cx]
        keep = _nms(boxes, confidences, cfg.nms_iou)
        results.append(
            [
                Detection(
                    x=float(boxes[k, 0]),
                    y=float(boxes[k, 1]),
                    w=float(boxes[k, 2]),
                    h=float(boxes[k, 3]),
                    objectness=float(confidences[k]),
                )
                for k in keep
            ]
        )
    return results


def max_objectness_batch(stack: list[np.ndarray], cfg: DetectorConfig) -> list[float]:
    """Per image: the maximum proposal objectness, or 0.0 when no window
    clears the proposal floor. Equals max over synthetic_detect output."""
    images = np.stack([a[:, :, :3] for a in stack])
    h, w = images.shape[1:3]
    ww, wh = cfg.window
    if h < wh or w < ww:
        warnings.warn(
            f"image {w}x{h} smaller than detector window {ww}x{wh}; no detections",
            stacklevel=2,
        )
        return [0.0 for _ in stack]
    scores = _score_maps(images, cfg)[:, :: cfg.stride, :: cfg.stride]
    out = []
    for i in range(len(stack)):
        top = float(_sigmoid(cfg.gain * (scores[i].max() - cfg.threshold)))
        out.append(top if top > OBJECTNESS_FLOOR else 0.0)
    return out


def lipschitz_bound(cfg: DetectorConfig) -> float:
    """Upper bound on |d objectness / d pixel-sample| for any window.

    With the kernel u (per-channel zero-sum) and window sum-of-squares S:
    score = <w, u> / sqrt(SU2 * (S + var_floor)), so a single sample change
    of size d moves <w, u> by at most max|u| * d and S by at most 3d, giving
    |d score| <= (max|u| / sqrt(SU2 * var_floor) + 3 / (2 * var_floor)) * d.
    The sigmoid contributes a factor gain / 4.
    """
    u = _cached_kernel(cfg)
    su2 = float((u ** 2).sum())
    umax = float(np.abs(u).max())
    l_score = umax / np.sqrt(su2 * cfg.var_floor) + 1.5 / cfg.var_floor
    return cfg.gain / 4.0 * l_score


class SyntheticDetector:
    """Callable wrapper binding a DetectorConfig; safe to share across threads."""

    def __init__(self, cfg: DetectorConfig | None = None):
        self.cfg = cfg or tuned_detector_config()

    def __call__(self, image: Raster) -> list[Detection]:
        return synthetic_detect(image, self.cfg)


# -- external adapter protocol ----------------------------------------------
#
# Newline-delimited JSON over the adapter's stdin/stdout:
#   hello:      {"type": "hello", "name": str, "classes": [str]}
#   request:    {"type": "detect", "id": int, "image_png_b64": str}
#   detections: {"type": "detections", "id": int, "detections": [...]}
#   error:      {"type": "error", "id": int, "message": str}
# Boxes are pixels, top-left origin, anchored at their top-left corner.


def parse_detections_payload(doc: dict, raw: str) -> list[Detection]:
    items = doc.get("detections")
    if not isinstance(items, list):
        raise AdapterProtocolError("response missing 'detections' list", payload=raw)
    out = []
    for item in items:
        try:
            out.append(Detection.from_json(item))
        except (KeyError, TypeError, ValueError) as exc:
            raise AdapterProtocolError(
                f"invalid detection in response: {exc}", payload=raw
            ) from exc
    return out


class DetectorClient:
    """Serial client for one adapter process: one in-flight request at a time."""

    def __init__(self, cmd: str | list[str], timeout: float = 30.0):
        self.timeout = timeout
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 0
        try:
            hello = self._read_message()
            if hello.get("type") != "hello" or "name" not in hello:
                raise AdapterProtocolError(
                    "adapter did not start with a hello message",
                    payload=json.dumps(hello),
                )
        except AdapterError:
            self.close()
            raise
        self.name = hello["name"]
        self.classes = list(hello.get("classes", []))

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _read_message(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise AdapterTimeoutError(
                f"adapter silent for {self.timeout}s"
            ) from None
        if line is None:
            raise AdapterDeadError("adapter closed its output stream")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterProtocolError(f"response is not JSON: {exc}", payload=line) from exc
        if not isinstance(doc, dict):
            raise AdapterProtocolError("response is not a JSON object", payload=line)
        return doc

    def detect(self, image: Raster) -> list[Detection]:
        if self._proc.poll() is not None:
            raise AdapterDeadError("adapter process has exited")
        self._next_id += 1
        req_id = self._next_id
        request = {
            "type": "detect",
            "id": req_id,
            "image_png_b64": base64.b64encode(encode_png(image)).decode("ascii"),
        }
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterDeadError(f"adapter stdin closed: {exc}") from exc
        doc = self._read_message()
        raw = json.dumps(doc)
        if doc.get("id") != req_id:
            raise AdapterProtocolError(
                f"response id {doc.get('id')} does not match request id {req_id}",
                payload=raw,
            )
        if doc.get("type") == "error":
            raise AdapterRequestError(str(doc.get("message", "adapter error")))
        if doc.get("type") != "detections":
            raise AdapterProtocolError(
                f"unexpected response type {doc.get('type')!r}", payload=raw
            )
        return parse_detections_payload(doc, raw)

    __call__ = detect

    def close(self):
        if self._proc.poll() is None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.wait(timeout=2.0)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "DetectorClient":
        return self

    def __exit__(self, *exc_info):
        self.close()


def external_detect(image: Raster, adapter: DetectorClient) -> list[Detection]:
    """One request/response round-trip through an adapter handle."""
    return adapter.detect(image)


def decode_request_image(b64: str) -> Raster:
    return decode_png(base64.b64decode(b64))
