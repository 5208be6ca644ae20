"""Layered scene compositing: warped art into crosswalk regions, foregrounds on top.

The layer order is fixed: background, then art overwriting every masked
region pixel, then foreground cutouts alpha-composited in list order. Opaque
cutout pixels therefore survive any art underneath bit-exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import DegenerateGeometryError, InputError, PlacementError, ShapeMismatchError
from .geometry import (
    Polygon,
    art_corners,
    homography_from_correspondences,
    min_enclosing_quad,
    polygon_to_mask,
    warp_into_region,
)
from .raster import Raster, load_image

if TYPE_CHECKING:
    from .attack import Perturbation


@dataclass(frozen=True)
class GroundTruthBox:
    """Axis-aligned pedestrian box: top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"ground-truth box needs positive size, got {self.w}x{self.h}")


@dataclass(frozen=True)
class ForegroundCutout:
    """RGBA cutout restored on top of the scene at an integer pixel offset."""

    image: Raster
    offset: tuple[int, int]

    def __post_init__(self):
        if self.image.channels != 4:
            raise ShapeMismatchError("foreground cutouts must be RGBA")


@dataclass
class SceneManifest:
    """One scene: background path, region polygons, ground truth, cutout references.

    Asset paths are stored relative to the manifest file's directory.
    """

    background: str
    regions: list[tuple[str, Polygon]]
    ground_truth: list[GroundTruthBox]
    foregrounds: list[tuple[str, tuple[int, int]]]
    base_dir: Path = field(default_factory=Path)


@dataclass
class LoadedScene:
    """A manifest with all assets materialized in memory."""

    background: Raster
    regions: list[Polygon]
    ground_truth: list[GroundTruthBox]
    foregrounds: list[ForegroundCutout]


def load_manifest(path: str | Path) -> SceneManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return _manifest_from_doc(doc, path.parent)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed manifest {path}: {exc}") from exc


def _manifest_from_doc(doc: dict, base_dir: Path) -> SceneManifest:
    regions = [
        (r.get("name", f"region_{i}"), Polygon(np.asarray(r["polygon"])))
        for i, r in enumerate(doc.get("regions", []))
    ]
    gts = [GroundTruthBox(b["x"], b["y"], b["w"], b["h"]) for b in doc.get("ground_truth", [])]
    fgs = [
        (f["image"], (int(f["offset"][0]), int(f["offset"][1])))
        for f in doc.get("foregrounds", [])
    ]
    return SceneManifest(doc["background"], regions, gts, fgs, base_dir=base_dir)


def save_manifest(manifest: SceneManifest, path: str | Path) -> None:
    doc = {
        "background": manifest.background,
        "regions": [
            {"name": name, "polygon": poly.vertices.tolist()}
            for name, poly in manifest.regions
        ],
        "ground_truth": [
            {"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in manifest.ground_truth
        ],
        "foregrounds": [
            {"image": img, "offset": [off[0], off[1]]} for img, off in manifest.foregrounds
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def materialize(manifest: SceneManifest) -> LoadedScene:
    """Load every asset the manifest references; ground truth must fit the image."""
    root = manifest.base_dir
    background = load_image(root / manifest.background)
    for i, box in enumerate(manifest.ground_truth):
        if box.x < 0 or box.y < 0 or box.x + box.w > background.width or box.y + box.h > background.height:
            raise InputError(
                f"ground-truth box {i} ({box.x}, {box.y}, {box.w}, {box.h}) "
                f"exceeds the {background.width}x{background.height} image"
            )
    fgs = [
        ForegroundCutout(load_image(root / img), offset)
        for img, offset in manifest.foregrounds
    ]
    return LoadedScene(
        background=background,
        regions=[poly for _, poly in manifest.regions],
        ground_truth=list(manifest.ground_truth),
        foregrounds=fgs,
    )


def inject_art(
    scene: Raster,
    regions: list[Polygon],
    art: Raster,
    orientation: int = 0,
    blend: float = 1.0,
    errors: list[tuple[int, Exception]] | None = None,
) -> Raster:
    """Paint the art pattern into each region through its fitted quad.

    Per region: fit the minimum enclosing quad, map the art rectangle onto it,
    inverse-warp, and overwrite the region pixels where the warp has alpha 1.
    Pixels outside every region are bit-identical to the input. A degenerate
    region is skipped with a warning (and recorded in `errors` when a list is
    supplied); the remaining regions are still processed.

    `orientation` rotates the art-to-quad corner correspondence by k*90 deg;
    `blend` < 1 mixes the art with the underlying scene instead of replacing it.
    """
    out = np.array(scene.data[:, :, :3])
    size = (scene.width, scene.height)
    corners = art_corners(art)
    for i, poly in enumerate(regions):
        try:
            quad = min_enclosing_quad(poly).rotated(orientation)
            h = homography_from_correspondences(corners, quad.corners)
            mask = polygon_to_mask(poly, size)
            if mask.count() == 0:
                raise DegenerateGeometryError(
                    f"region {i} rasterizes to an empty mask"
                )
            warped = warp_into_region(art, h, size, mask)
        except Exception as exc:  # noqa: BLE001 - per-region isolation is the contract
            warnings.warn(f"region {i} skipped: {exc}", stacklevel=2)
            if errors is not None:
                errors.append((i, exc))
            continue
        hit = warped.data[:, :, 3] == 1.0
        if blend >= 1.0:
            out[hit] = warped.data[hit][:, :3]
        else:
            out[hit] = blend * warped.data[hit][:, :3] + (1.0 - blend) * out[hit]
    return Raster(out)


def compose_scene(
    background: Raster,
    regions: list[Polygon],
    art: Raster | None,
    foregrounds: list[ForegroundCutout],
    orientation: int = 0,
    blend: float = 1.0,
) -> Raster:
    """Background + injected art + foreground cutouts, in that order."""
    base = background.rgb()
    if art is not None:
        base = inject_art(base, regions, art, orientation=orientation, blend=blend)
    out = np.array(base.data)
    h, w = out.shape[:2]
    for i, fg in enumerate(foregrounds):
        ox, oy = fg.offset
        fh, fw = fg.image.height, fg.image.width
        if ox < 0 or oy < 0 or ox + fw > w or oy + fh > h:
            raise PlacementError(
                f"cutout {i} at offset ({ox}, {oy}) size {fw}x{fh} "
                f"does not fit inside the {w}x{h} scene"
            )
        rgb = fg.image.data[:, :, :3]
        alpha = fg.image.data[:, :, 3:4]
        target = out[oy : oy + fh, ox : ox + fw]
        # alpha == 1 must copy the cutout exactly, with no rounding residue
        blend_px = alpha < 1.0
        mixed = rgb * alpha + target * (1.0 - alpha)
        target[:] = np.where(blend_px, mixed, rgb)
    return Raster(out)


def apply_perturbation(art: Raster, delta: "Perturbation | np.ndarray") -> Raster:
    """Shifted art: clamp(art + delta, 0, 1) per channel."""
    values = getattr(delta, "values", delta)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != art.data.shape:
        raise ShapeMismatchError(
            f"perturbation shape {values.shape} does not match art {art.data.shape}"
        )
    return Raster(np.clip(art.data + values, 0.0, 1.0))
