"""Deterministic synthetic intersection scenes with exact ground truth.

A fixed-camera layout: gray road with texture noise, 1-3 perspective-skewed
crosswalk quads painted with a stripe pattern, and pedestrians rendered from
the detector's template family. The road and crosswalk geometry depend only
on the seed (stationary camera); pedestrian placement depends on (seed, index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compose import (
    ForegroundCutout,
    GroundTruthBox,
    LoadedScene,
    SceneManifest,
    inject_art,
    save_manifest,
)
from .detect import default_pedestrian_template
from .errors import GenerationError, InputError
from .geometry import Polygon, min_enclosing_quad
from .raster import Raster, save_image

ROAD_GRAY = 0.40
STRIPE_PAINT = 0.58
ROAD_NOISE = 0.01

# vertical slots (fractions of image height) for up to three crosswalks
_SLOTS = [(0.62, 0.92), (0.30, 0.56), (0.04, 0.26)]


@dataclass(frozen=True)
class SceneGenConfig:
    image_size: tuple[int, int] = (320, 240)
    n_crosswalks: int = 2
    pedestrians_per_scene: tuple[int, int] = (1, 3)
    pedestrian_size: tuple[tuple[int, int], tuple[int, int]] = ((12, 26), (12, 26))
    perspective_skew: float = 0.18
    seed: int = 0
    placement_margin: int = 8
    jitter: float = 0.05

    def __post_init__(self):
        w, h = self.image_size
        if w < 64 or h < 64:
            raise InputError(f"image size too small: {self.image_size}")
        if not (1 <= self.n_crosswalks <= 3):
            raise InputError("n_crosswalks must be 1..3")
        lo, hi = self.pedestrians_per_scene
        if lo < 0 or hi < lo:
            raise InputError(f"bad pedestrian count range {self.pedestrians_per_scene}")
        if not (0.0 <= self.perspective_skew <= 0.5):
            raise InputError("perspective_skew must be in [0, 0.5]")
        (w0, h0), (w1, h1) = self.pedestrian_size
        if w0 < 4 or h0 < 8 or w1 < w0 or h1 < h0:
            raise InputError(f"bad pedestrian size range {self.pedestrian_size}")
        if not (0.0 <= self.jitter <= 0.10):
            raise InputError("jitter must be within [0, 0.10]")


@dataclass
class GeneratedScene:
    scene: LoadedScene
    placements: list[dict] = field(default_factory=list)


def stripe_art(
    width: int = 256,
    height: int = 64,
    period: int = 8,
    road: float = ROAD_GRAY,
    paint: float = STRIPE_PAINT,
) -> Raster:
    """Crosswalk-style vertical bars: the generator's clean paint pattern."""
    arr = np.full((height, width, 3), road)
    cols = (np.arange(width) % period) < period // 2
    arr[:, cols] = paint
    return Raster(arr)


def solid_art(color: tuple[float, float, float], width: int = 256, height: int = 64) -> Raster:
    arr = np.empty((height, width, 3))
    arr[:, :] = color
    return Raster(arr)


def crosswalk_regions(cfg: SceneGenConfig) -> list[Polygon]:
    """Perspective-skewed crosswalk quads; deterministic in cfg.seed alone."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    w, h = cfg.image_size
    regions = []
    for k in range(cfg.n_crosswalks):
        y0f, y1f = _SLOTS[k]
        jig = rng.uniform(-0.01, 0.01, size=4)
        x_lo = (0.08 + jig[0]) * w
        x_hi = (0.92 + jig[1]) * w
        y_top = (y0f + jig[2]) * h
        y_bot = (y1f + jig[3]) * h
        inset = cfg.perspective_skew * 0.5 * (x_hi - x_lo)
        quad = np.asarray(
            [
                [x_lo + inset, y_top],
                [x_hi - inset, y_top],
                [x_hi, y_bot],
                [x_lo, y_bot],
            ]
        )
        regions.append(Polygon(quad))
    return regions


def clean_background(cfg: SceneGenConfig) -> Raster:
    """Road plus texture noise with the stripe pattern painted into each region."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    w, h = cfg.image_size
    road = np.clip(ROAD_GRAY + rng.normal(0.0, ROAD_NOISE, (h, w, 1)), 0.0, 1.0)
    road = Raster(np.repeat(road, 3, axis=2))
    return inject_art(road, crosswalk_regions(cfg), stripe_art())


def _resize_template(template: Raster, size: tuple[int, int]) -> Raster:
    if (template.width, template.height) == tuple(size):
        return template
    from .raster import sample_bilinear_many

    w, h = size
    xs = np.linspace(0.0, template.width - 1.0, w)
    ys = np.linspace(0.0, template.height - 1.0, h)
    gx, gy = np.meshgrid(xs, ys)
    rgb, _ = sample_bilinear_many(template.rgb(), gx.ravel(), gy.ravel())
    alpha, _ = sample_bilinear_many(
        Raster(np.repeat(template.data[:, :, 3:4], 3, axis=2)), gx.ravel(), gy.ravel()
    )
    out = np.dstack(
        [rgb.reshape(h, w, 3), (alpha.reshape(h, w, 3)[:, :, :1] > 0.5).astype(np.float64)]
    )
    return Raster(out)


def generate_scene(cfg: SceneGenConfig, index: int) -> GeneratedScene:
    """One scene with pedestrians placed fully inside crosswalk quads.

    Each pedestrian window (template plus placement margin) must fit inside a
    crosswalk quad and stay disjoint from every other pedestrian window, so
    ground truth is exact and unoccluded. Raises GenerationError when 1000
    placement attempts cannot satisfy that.
    """
    background = clean_background(cfg)
    regions = crosswalk_regions(cfg)
    quads = [min_enclosing_quad(p) for p in regions]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13, index]))

    lo, hi = cfg.pedestrians_per_scene
    count = int(rng.integers(lo, hi + 1))
    template = default_pedestrian_template()
    (w0, h0), (w1, h1) = cfg.pedestrian_size

    w, h = cfg.image_size
    margin = cfg.placement_margin
    placements: list[dict] = []
    cutouts: list[ForegroundCutout] = []
    gts: list[GroundTruthBox] = []
    occupied: list[tuple[float, float, float, float]] = []

    for ped in range(count):
        tw = int(rng.integers(w0, w1 + 1))
        th = int(rng.integers(h0, h1 + 1))
        tpl = _resize_template(template, (tw, th))
        placed = False
        for _ in range(1000):
            region_idx = int(rng.integers(0, len(quads)))
            quad = quads[region_idx]
            # sample inside the region's bounding box so attempts mostly land
            bx0, by0 = quad.corners.min(axis=0)
            bx1, by1 = quad.corners.max(axis=0)
            x_lo, x_hi = bx0 + margin, bx1 - margin - tw
            y_lo, y_hi = by0 + margin, by1 - margin - th
            if x_hi <= x_lo or y_hi <= y_lo:
                continue
            x = float(int(rng.uniform(x_lo, x_hi)))
            y = float(int(rng.uniform(y_lo, y_hi)))
            win = (x - margin, y - margin, tw + 2 * margin, th + 2 * margin)
            corners_ok = all(
                quad.contains(cx, cy)
                for cx in (win[0], win[0] + win[2])
                for cy in (win[1], win[1] + win[3])
            )
            if not corners_ok:
                continue
            if x < 0 or y < 0 or x + tw > w or y + th > h:
                continue
            if any(_boxes_touch(win, other) for other in occupied):
                continue
            jit = float(rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter))
            rgb = np.clip(tpl.data[:, :, :3] * jit, 0.0, 1.0)
            cut = Raster(np.dstack([rgb, tpl.data[:, :, 3]]))
            cutouts.append(ForegroundCutout(image=cut, offset=(int(x), int(y))))
            gts.append(GroundTruthBox(x=x, y=y, w=float(tw), h=float(th)))
            occupied.append(win)
            placements.append(
                {"region": region_idx, "x": x, "y": y, "w": tw, "h": th, "jitter": jit}
            )
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"scene {index}: could not place pedestrian {ped} inside a crosswalk "
                f"after 1000 attempts (margin {margin}, {len(occupied)} already placed)"
            )

    scene = LoadedScene(
        background=background,
        regions=regions,
        ground_truth=gts,
        foregrounds=cutouts,
    )
    return GeneratedScene(scene=scene, placements=placements)


def _boxes_touch(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return not (ax + aw <= bx or bx + bw <= ax or ay + ah <= by or by + bh <= ay)


def generate_dataset(cfg: SceneGenConfig, n: int, out_dir: str | Path) -> list[SceneManifest]:
    """Write scenes 0..n-1 plus shared assets under out_dir; returns the manifests."""
    if n < 1:
        raise InputError("need n >= 1 scenes")
    out = Path(out_dir)
    (out / "backgrounds").mkdir(parents=True, exist_ok=True)
    (out / "cutouts").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)

    background = clean_background(cfg)
    save_image(background, out / "backgrounds" / "background.png")
    regions = crosswalk_regions(cfg)
    w, h = cfg.image_size
    mask_doc = {
        "image_size": [w, h],
        "regions": [
            {"name": f"crosswalk_{i}", "polygon": p.vertices.tolist()}
            for i, p in enumerate(regions)
        ],
    }
    (out / "masks" / "regions.json").write_text(json.dumps(mask_doc, indent=1) + "\n")

    manifests = []
    for index in range(n):
        gen = generate_scene(cfg, index)
        fg_entries = []
        for ped_idx, cut in enumerate(gen.scene.foregrounds):
            rel = f"cutouts/scene_{index:03d}_ped_{ped_idx:02d}.png"
            save_image(cut.image, out / rel)
            fg_entries.append((rel, cut.offset))
        manifest = SceneManifest(
            background="backgrounds/background.png",
            regions=[(f"crosswalk_{i}", p) for i, p in enumerate(regions)],
            ground_truth=gen.scene.ground_truth,
            foregrounds=fg_entries,
            base_dir=out,
        )
        save_manifest(manifest, out / f"manifest_{index:03d}.json")
        manifests.append(manifest)
    return manifests
