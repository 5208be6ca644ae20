"""Universal bounded perturbation of an art pattern against a detector.

The optimizer only queries the detector through the exchange protocol (no
gradients are requested), estimating the smoothed gradient of the objectness
loss from antithetic Gaussian probes and taking projected sign steps inside
the L-infinity ball. A single perturbation is trained for the art pattern and
applied unchanged to every scene.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .compose import LoadedScene
from .detect import DetectorFn, SyntheticDetector, detect_array, max_objectness_batch
from .errors import AdapterError, ArtwalkError, InputError, ShapeMismatchError
from .geometry import (
    art_corners,
    homography_from_correspondences,
    min_enclosing_quad,
    polygon_to_mask,
)
from .raster import (
    BinaryMask,
    Raster,
    load_mask,
    load_rgb16_png,
    save_mask,
    save_rgb16_png,
)


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Bounded signed pixel delta in art coordinates.

    Every value lies in [-epsilon, +epsilon]; values are exactly zero outside
    the support mask when one is present.
    """

    values: np.ndarray
    epsilon: float
    support: BinaryMask | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ShapeMismatchError(f"perturbation needs shape (h, w, c), got {values.shape}")
        if not (0.0 < self.epsilon <= 1.0):
            raise InputError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if np.abs(values).max() > self.epsilon:
            raise InputError("perturbation exceeds its epsilon bound")
        if self.support is not None:
            if (self.support.height, self.support.width) != values.shape[:2]:
                raise ShapeMismatchError("support mask does not match perturbation shape")
            if np.any(values[~self.support.bits] != 0.0):
                raise InputError("perturbation is nonzero outside its support")
        values = np.ascontiguousarray(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(
        cls, shape: tuple[int, int, int], epsilon: float, support: BinaryMask | None = None
    ) -> "Perturbation":
        return cls(values=np.zeros(shape), epsilon=epsilon, support=support)


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 16 / 255
    step_size: float | None = None  # None -> epsilon / 8
    iterations: int = 200
    queries_per_gradient: int = 32
    smoothing_sigma: float = 4 / 255
    seed: int = 0
    aggregate: str = "mean"  # or "max" over the batch

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise InputError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.iterations < 0:
            raise InputError("iterations must be >= 0")
        if self.queries_per_gradient < 1:
            raise InputError("queries_per_gradient must be >= 1")
        if self.smoothing_sigma <= 0:
            raise InputError("smoothing_sigma must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise InputError("step_size must be positive")
        if self.aggregate not in ("mean", "max"):
            raise InputError(f"aggregate must be 'mean' or 'max', got {self.aggregate!r}")

    @property
    def step(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 8.0

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "step_size": self.step,
            "iterations": self.iterations,
            "queries_per_gradient": self.queries_per_gradient,
            "smoothing_sigma": self.smoothing_sigma,
            "seed": self.seed,
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttackConfig":
        return cls(**{k: doc[k] for k in doc if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class TraceRow:
    loss: float
    best_loss: float
    queries_used: int


@dataclass
class AttackTrace:
    rows: list[TraceRow] = field(default_factory=list)
    initial_loss: float | None = None
    metrics_delta: dict = field(default_factory=dict)

    def write_jsonl(self, path: str | Path) -> None:
        lines = []
        if self.initial_loss is not None:
            lines.append(json.dumps({"iteration": 0, "loss": self.initial_loss,
                                     "best_loss": self.initial_loss, "queries_used": 1}))
        for i, row in enumerate(self.rows, start=1):
            lines.append(
                json.dumps(
                    {
                        "iteration": i,
                        "loss": row.loss,
                        "best_loss": row.best_loss,
                        "queries_used": row.queries_used,
                    }
                )
            )
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


class AttackAbortedError(ArtwalkError):
    """Detector failure mid-optimization; carries the partial trace."""

    def __init__(self, message: str, trace: AttackTrace):
        super().__init__(message)
        self.trace = trace


class SceneBattery:
    """Pre-warped composition pipeline for repeated loss probes on one art pattern.

    The region quads, homographies, and bilinear sample coordinates depend
    only on the art size and the scenes, so they are computed once; each
    probe then only gathers art pixels and re-runs the detector. Composition
    reproduces compose_scene bit-exactly (asserted by tests).
    """

    def __init__(self, art: Raster, scenes: list[LoadedScene], detector: DetectorFn):
        if not scenes:
            raise InputError("attack batch must be non-empty")
        self.art_shape = art.data.shape
        self.detector = detector
        if isinstance(detector, SyntheticDetector):
            cfg = detector.cfg
            self._cfg = cfg
            self._detect = lambda arr: detect_array(arr, cfg)
        else:
            self._cfg = None
            self._detect = lambda arr: detector(Raster(arr))
        self._art = art
        self._plans = [self._plan_scene(art, scene) for scene in scenes]
        shapes = {plan["static"].shape for plan in self._plans}
        self._batchable = self._cfg is not None and len(shapes) == 1

    @staticmethod
    def _plan_scene(art: Raster, scene: LoadedScene):
        h, w = scene.background.height, scene.background.width
        corners = art_corners(art)
        static = scene.background.rgb().data
        gathers = []
        for poly in scene.regions:
            quad = min_enclosing_quad(poly)
            hom = homography_from_correspondences(corners, quad.corners)
            mask = polygon_to_mask(poly, (w, h))
            ys, xs = np.nonzero(mask.bits)
            if len(ys) == 0:
                continue
            hinv = hom.inverse()
            m = hinv.m
            xf = xs.astype(np.float64)
            yf = ys.astype(np.float64)
            denom = m[2, 0] * xf + m[2, 1] * yf + m[2, 2]
            finite = np.abs(denom) >= 1e-12
            dsafe = np.where(finite, denom, 1.0)
            sx = (m[0, 0] * xf + m[0, 1] * yf + m[0, 2]) / dsafe
            sy = (m[1, 0] * xf + m[1, 1] * yf + m[1, 2]) / dsafe
            inside = (
                finite
                & (sx >= 0.0)
                & (sx <= art.width - 1.0)
                & (sy >= 0.0)
                & (sy <= art.height - 1.0)
            )
            sx, sy = sx[inside], sy[inside]
            ys_in, xs_in = ys[inside], xs[inside]
            x0 = np.floor(np.clip(sx, 0.0, art.width - 1.0)).astype(np.intp)
            y0 = np.floor(np.clip(sy, 0.0, art.height - 1.0)).astype(np.intp)
            x1 = np.minimum(x0 + 1, art.width - 1)
            y1 = np.minimum(y0 + 1, art.height - 1)
            fx = (sx - x0)[:, None]
            fy = (sy - y0)[:, None]
            gathers.append((ys_in, xs_in, y0, x0, y1, x1, fx, fy))
        return {"static": static, "gathers": gathers, "scene": scene}

    def compose(self, art_values: np.ndarray, plan) -> np.ndarray:
        out = plan["static"].copy()
        scene: LoadedScene = plan["scene"]
        for ys, xs, y0, x0, y1, x1, fx, fy in plan["gathers"]:
            d = art_values
            top = d[y0, x0] * (1.0 - fx) + d[y0, x1] * fx
            bot = d[y1, x0] * (1.0 - fx) + d[y1, x1] * fx
            out[ys, xs] = top * (1.0 - fy) + bot * fy
        # restore foreground pixels on top of the painted regions
        for fg in scene.foregrounds:
            ox, oy = fg.offset
            fh, fw = fg.image.height, fg.image.width
            rgb = fg.image.data[:, :, :3]
            alpha = fg.image.data[:, :, 3:4]
            target = out[oy : oy + fh, ox : ox + fw]
            blend_px = alpha < 1.0
            mixed = rgb * alpha + target * (1.0 - alpha)
            target[:] = np.where(blend_px, mixed, rgb)
        return out

    def loss_for_values(self, delta_values: np.ndarray, aggregate: str = "mean") -> float:
        """Objectness loss of clamp(art + delta) composed into every scene.

        The synthetic fast path takes each scene's maximum window objectness
        directly from the score map: greedy NMS always keeps the top-scoring
        window and the sigmoid is monotone, so the result is identical to
        running the full detector and maximizing over its proposals.
        """
        art_values = np.clip(self._art.data + delta_values, 0.0, 1.0)
        images = [self.compose(art_values, plan) for plan in self._plans]
        if self._batchable:
            maxima = max_objectness_batch(images, self._cfg)
        else:
            per_scene = [self._detect(image) for image in images]
            maxima = [max((d.objectness for d in dets), default=0.0) for dets in per_scene]
        if aggregate == "max":
            return float(max(maxima))
        return float(np.mean(maxima))


def objectness_loss(
    art: Raster,
    delta: Perturbation | np.ndarray,
    batch: list[LoadedScene],
    detector: DetectorFn,
    aggregate: str = "mean",
) -> float:
    """Mean over scenes of the maximum proposal objectness (0 with no proposals).

    Each scene is composed with the perturbed art injected before running the
    detector. Detector failures propagate, naming the scene index.
    """
    battery = SceneBattery(art, batch, detector)
    values = np.asarray(getattr(delta, "values", delta), dtype=np.float64)
    try:
        return battery.loss_for_values(values, aggregate=aggregate)
    except AdapterError as exc:
        raise type(exc)(f"{exc} (while evaluating the attack batch)") from exc


def estimate_gradient(
    art: Raster,
    delta: Perturbation | np.ndarray,
    batch: list[LoadedScene] | None,
    detector: DetectorFn | None,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
    loss_fn: Callable[[np.ndarray], float] | None = None,
    support: BinaryMask | None = None,
) -> np.ndarray:
    """Antithetic sampled estimate of the smoothed loss gradient.

    Draws queries_per_gradient unit-Gaussian direction rasters u_k (zeroed
    outside the support), probes the loss at delta +- sigma * u_k, and returns
    (1 / (2 n sigma)) * sum_k (L+ - L-) u_k.

    loss_fn replaces the detector round-trip when provided (used for
    estimator calibration against analytic losses).
    """
    values = np.asarray(getattr(delta, "values", delta), dtype=np.float64)
    if support is None and isinstance(delta, Perturbation):
        support = delta.support
    if loss_fn is None:
        if batch is None or detector is None:
            raise InputError("need batch and detector (or an explicit loss_fn)")
        battery = SceneBattery(art, batch, detector)
        loss_fn = lambda v: battery.loss_for_values(v, aggregate=cfg.aggregate)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    sigma = cfg.smoothing_sigma
    grad = np.zeros_like(values)
    for _ in range(cfg.queries_per_gradient):
        u = rng.standard_normal(values.shape)
        if support is not None:
            u[~support.bits] = 0.0
        lp = loss_fn(values + sigma * u)
        lm = loss_fn(values - sigma * u)
        grad += (lp - lm) * u
    return grad / (2.0 * cfg.queries_per_gradient * sigma)


def optimize_perturbation(
    art: Raster,
    batch: list[LoadedScene],
    detector: DetectorFn,
    cfg: AttackConfig,
    support: BinaryMask | None = None,
) -> tuple[Perturbation, AttackTrace]:
    """Projected sign descent on the objectness loss; returns the best delta seen.

    Starts from delta = 0, steps against the estimated gradient, and projects
    each iterate to the epsilon ball, the support mask, and the [0, 1]
    feasibility of art + delta. Fully deterministic given cfg.seed.
    """
    battery = SceneBattery(art, batch, detector)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    shape = art.data.shape
    delta = np.zeros(shape)
    trace = AttackTrace()

    def project(values: np.ndarray) -> np.ndarray:
        out = np.clip(values, -cfg.epsilon, cfg.epsilon)
        np.clip(out, -art.data, 1.0 - art.data, out=out)
        if support is not None:
            out[~support.bits] = 0.0
        return out

    loss_of = lambda v: battery.loss_for_values(v, aggregate=cfg.aggregate)
    try:
        best_loss = loss_of(delta)
    except AdapterError as exc:
        raise AttackAbortedError(f"detector failed on the initial loss: {exc}", trace) from exc
    trace.initial_loss = best_loss
    best = delta.copy()
    queries = 1

    for _ in range(cfg.iterations):
        try:
            grad = estimate_gradient(
                art, delta, None, None, cfg, rng=rng,
                loss_fn=loss_of, support=support,
            )
            queries += 2 * cfg.queries_per_gradient
            delta = project(delta - cfg.step * np.sign(grad))
            loss = loss_of(delta)
            queries += 1
        except AdapterError as exc:
            raise AttackAbortedError(f"detector failed mid-attack: {exc}", trace) from exc
        if loss < best_loss:
            best_loss = loss
            best = delta.copy()
        trace.rows.append(TraceRow(loss=loss, best_loss=best_loss, queries_used=queries))

    trace.metrics_delta = {
        "loss_initial": trace.initial_loss,
        "loss_best": best_loss,
        "loss_delta": best_loss - trace.initial_loss,
    }
    perturbation = Perturbation(values=best, epsilon=cfg.epsilon, support=support)
    return perturbation, trace


# -- perturbation files -------------------------------------------------------
#
# Signed values are stored as a pair of 16-bit PNG planes (positive and
# negative parts) plus a JSON sidecar recording epsilon and the support path.


def save_perturbation(pert: Perturbation, out_dir: str | Path, stem: str = "perturbation") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_rgb16_png(np.clip(pert.values, 0.0, None), out / f"{stem}_pos.png")
    save_rgb16_png(np.clip(-pert.values, 0.0, None), out / f"{stem}_neg.png")
    support_name = None
    if pert.support is not None:
        support_name = f"{stem}_support.png"
        save_mask(pert.support, out / support_name)
    sidecar = {
        "epsilon": pert.epsilon,
        "positive": f"{stem}_pos.png",
        "negative": f"{stem}_neg.png",
        "support": support_name,
    }
    path = out / f"{stem}.json"
    path.write_text(json.dumps(sidecar, indent=1) + "\n")
    return path


def load_perturbation(sidecar_path: str | Path) -> Perturbation:
    path = Path(sidecar_path)
    doc = json.loads(path.read_text())
    pos = load_rgb16_png(path.parent / doc["positive"])
    neg = load_rgb16_png(path.parent / doc["negative"])
    values = pos - neg
    epsilon = float(doc["epsilon"])
    support = load_mask(path.parent / doc["support"]) if doc.get("support") else None
    # 16-bit quantization can overshoot epsilon by half a quantum; clip it back
    values = np.clip(values, -epsilon, epsilon)
    if support is not None:
        values[~support.bits] = 0.0
    return Perturbation(values=values, epsilon=epsilon, support=support)
