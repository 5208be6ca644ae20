"""Polygons, enclosing quadrilaterals, homographies, and perspective warps.

Coordinates are image pixels: origin top-left, x right, y down. "CCW" below
always means positive shoelace area in this coordinate frame (which renders
clockwise on screen); all winding checks use that single convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, PointAtInfinityError
from .raster import BinaryMask, Raster, sample_bilinear_many

_PIVOT_EPS = 1e-12


def _shoelace(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross(o, a, b) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


@dataclass(frozen=True, eq=False)
class Polygon:
    """Ordered vertex list, length >= 3, no two consecutive vertices identical."""

    vertices: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.vertices, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise DegenerateGeometryError(f"polygon needs >=3 (x,y) points, got {pts.shape}")
        nxt = np.roll(pts, -1, axis=0)
        if np.any(np.all(pts == nxt, axis=1)):
            raise DegenerateGeometryError("polygon has two identical consecutive vertices")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "vertices", pts)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def area(self) -> float:
        return abs(_shoelace(self.vertices))

    def is_simple(self) -> bool:
        """True if no two non-adjacent edges intersect (O(n^2) segment test)."""
        pts = self.vertices
        n = len(pts)
        edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if _segments_intersect(*edges[i], *edges[j]):
                    return False
        return True


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


@dataclass(frozen=True, eq=False)
class Quad:
    """Exactly 4 corners, convex, CCW, no 3 collinear; corner 0 maps to the art top-left."""

    corners: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.corners, dtype=np.float64)
        if pts.shape != (4, 2):
            raise DegenerateGeometryError(f"quad needs exactly 4 corners, got {pts.shape}")
        if _shoelace(pts) <= 0.0:
            raise DegenerateGeometryError("quad corners must wind CCW (positive area)")
        scale2 = max(1.0, float(np.ptp(pts, axis=0).max())) ** 2
        for i in range(4):
            turn = _cross(pts[i - 1], pts[i], pts[(i + 1) % 4])
            if turn <= 1e-12 * scale2:
                raise DegenerateGeometryError("quad must be strictly convex (no 3 collinear corners)")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "corners", pts)

    def area(self) -> float:
        return _shoelace(self.corners)

    def contains(self, x: float, y: float, slack: float = 1e-9) -> bool:
        pts = self.corners
        for i in range(4):
            if _cross(pts[i], pts[(i + 1) % 4], (x, y)) < -slack:
                return False
        return True

    def rotated(self, k: int) -> "Quad":
        """Cycle the corner correspondence by k*90 degrees of art rotation."""
        return Quad(np.roll(self.corners, -int(k) % 4, axis=0))


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map, normalized so m[2][2] = 1."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise DegenerateGeometryError(f"homography needs a 3x3 matrix, got {m.shape}")
        if abs(m[2, 2]) < _PIVOT_EPS:
            raise DegenerateGeometryError("homography cannot be normalized (m[2][2] ~ 0)")
        m = m / m[2, 2]
        if abs(_det3(m)) < _PIVOT_EPS:
            raise DegenerateGeometryError("homography matrix is singular")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def inverse(self) -> "Homography":
        return Homography(_adjugate3(self.m))


def _det3(m: np.ndarray) -> float:
    return float(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _adjugate3(m: np.ndarray) -> np.ndarray:
    out = np.empty((3, 3), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(m, i, axis=0), j, axis=1)
            out[j, i] = ((-1) ** (i + j)) * (
                minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0]
            )
    return out


def convex_hull(points) -> Polygon:
    """Counterclockwise convex hull (monotone chain); collinear edge points removed."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise DegenerateGeometryError(f"need >=3 points, got {pts.shape}")
    uniq = sorted({(float(x), float(y)) for x, y in pts})
    if len(uniq) < 3:
        raise DegenerateGeometryError("fewer than 3 distinct points")

    def half(seq):
        out: list[tuple[float, float]] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0.0:
                out.pop()
            out.append(p)
        return out

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateGeometryError("all points are collinear")
    return Polygon(np.asarray(hull))


def _line_intersection(a, b, c, d) -> tuple[float, float] | None:
    """Intersection of infinite lines (a,b) and (c,d); None when parallel."""
    r = (b[0] - a[0], b[1] - a[1])
    s = (d[0] - c[0], d[1] - c[1])
    denom = r[0] * s[1] - r[1] * s[0]
    scale = max(abs(r[0]), abs(r[1]), abs(s[0]), abs(s[1]), 1.0)
    if abs(denom) < 1e-12 * scale * scale:
        return None
    t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / denom
    return (a[0] + t * r[0], a[1] + t * r[1])


def _min_area_rect(hull: np.ndarray) -> np.ndarray:
    """Minimum-area enclosing rotated rectangle via edge-aligned sweeps."""
    best = None
    n = len(hull)
    for i in range(n):
        e = hull[(i + 1) % n] - hull[i]
        norm = np.hypot(e[0], e[1])
        if norm == 0.0:
            continue
        ux, uy = e[0] / norm, e[1] / norm
        rot = np.array([[ux, uy], [-uy, ux]])
        proj = hull @ rot.T
        lo = proj.min(axis=0)
        hi = proj.max(axis=0)
        area = (hi[0] - lo[0]) * (hi[1] - lo[1])
        if best is None or area < best[0]:
            corners = np.array(
                [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]
            )
            best = (area, corners @ rot)
    if best is None:
        raise DegenerateGeometryError("degenerate hull")
    rect = best[1]
    if _shoelace(rect) < 0.0:
        rect = rect[::-1]
    return rect


def _orient_corner0(corners: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    d2 = ((corners - anchor) ** 2).sum(axis=1)
    return np.roll(corners, -int(np.argmin(d2)), axis=0)


def min_enclosing_quad(polygon: Polygon) -> Quad:
    """Tight 4-corner convex region enclosing the polygon.

    Takes the convex hull, then repeatedly merges the hull edge whose removal
    (replacing its endpoints with the intersection of the two flanking edges)
    adds the least area, until 4 vertices remain. A 3-vertex hull gets its
    longest edge split instead. If no edge can be merged (flanking edges
    parallel or diverging), falls back to the minimum-area rotated rectangle.

    Corner 0 is the corner nearest the hull vertex with lexicographically
    smallest (y, x); winding is CCW.
    """
    hull_poly = convex_hull(polygon.vertices)
    hull = [tuple(p) for p in hull_poly.vertices]
    anchor_idx = min(range(len(hull)), key=lambda i: (hull[i][1], hull[i][0]))
    anchor = np.asarray(hull[anchor_idx])

    if len(hull) == 3:
        return Quad(_orient_corner0(_split_triangle(np.asarray(hull)), anchor))

    while len(hull) > 4:
        n = len(hull)
        best = None  # (added_area, edge_index, intersection_point)
        for j in range(n):
            a, b = hull[j - 1], hull[j]
            c, d = hull[(j + 1) % n], hull[(j + 2) % n]
            x = _line_intersection(a, b, c, d)
            if x is None:
                continue
            # merge is valid only when x lies beyond b along a->b and before c along d->c
            ab = (b[0] - a[0], b[1] - a[1])
            dc = (c[0] - d[0], c[1] - d[1])
            if (x[0] - b[0]) * ab[0] + (x[1] - b[1]) * ab[1] < 0.0:
                continue
            if (x[0] - c[0]) * dc[0] + (x[1] - c[1]) * dc[1] < 0.0:
                continue
            added = abs(_shoelace(np.asarray([b, x, c])))
            if best is None or added < best[0]:
                best = (added, j, x)
        if best is None:
            return Quad(_orient_corner0(_min_area_rect(np.asarray(hull)), anchor))
        _, j, x = best
        hull = _replace_pair(hull, j, x)

    quad = np.asarray(hull)
    if _shoelace(quad) <= 0.0:
        quad = quad[::-1]
    return Quad(_orient_corner0(quad, anchor))


def _replace_pair(hull: list, j: int, x: tuple[float, float]) -> list:
    """Replace hull[j] and hull[j+1] (cyclic) with the single point x, keeping order."""
    n = len(hull)
    k = (j + 1) % n
    out = []
    for i in range(n):
        if i == j:
            out.append(x)
        elif i == k:
            continue
        else:
            out.append(hull[i])
    return out


def _split_triangle(tri: np.ndarray) -> np.ndarray:
    """Promote a triangle to a strictly convex quad by splitting its longest edge.

    The midpoint is nudged outward by a hair so no 3 corners are collinear;
    the quad still contains the triangle and its area grows only by ~1e-6
    of the edge length squared.
    """
    lengths = [np.linalg.norm(tri[(i + 1) % 3] - tri[i]) for i in range(3)]
    j = int(np.argmax(lengths))
    a, b = tri[j], tri[(j + 1) % 3]
    mid = (a + b) / 2.0
    edge = b - a
    # outward normal for CCW winding in y-down coordinates
    normal = np.array([edge[1], -edge[0]])
    if _shoelace(tri) < 0.0:
        tri = tri[::-1]
        return _split_triangle(tri)
    nudged = mid + normal / np.linalg.norm(normal) * max(1e-6 * lengths[j], 1e-9)
    out = [tuple(p) for p in tri]
    out.insert(j + 1, tuple(nudged))
    return np.asarray(out)


def _solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting; raises on tiny pivots."""
    a = a.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    n = a.shape[0]
    threshold = _PIVOT_EPS * max(1.0, float(np.abs(a).max()))
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot, col]) < threshold:
            raise DegenerateGeometryError("singular correspondence system")
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :] -= factors[:, None] * a[col]
        b[col + 1 :] -= factors * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def _check_no_collinear_triple(pts: np.ndarray, label: str) -> None:
    scale2 = max(1.0, float(np.ptp(pts, axis=0).max())) ** 2
    idx = range(len(pts))
    for i in idx:
        for j in idx:
            for k in idx:
                if i < j < k:
                    if abs(_cross(pts[i], pts[j], pts[k])) < 1e-9 * scale2:
                        raise DegenerateGeometryError(
                            f"3 collinear points in {label} correspondence set"
                        )


def homography_from_correspondences(src, dst) -> Homography:
    """Direct linear transform from exactly 4 point correspondences (h33 = 1)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise DegenerateGeometryError("need exactly 4 source and 4 destination points")
    _check_no_collinear_triple(src, "source")
    _check_no_collinear_triple(dst, "destination")

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u]
        b[2 * i] = u
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v]
        b[2 * i + 1] = v
    h = _solve_linear(a, b)
    return Homography(np.append(h, 1.0).reshape(3, 3))


def apply_homography(h: Homography, pt) -> tuple[float, float]:
    """Map one point; raises PointAtInfinityError when the homogeneous scale ~ 0."""
    x, y = float(pt[0]), float(pt[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < _PIVOT_EPS:
        raise PointAtInfinityError(f"point {pt} maps to infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def apply_homography_many(h: Homography, xs: np.ndarray, ys: np.ndarray):
    """Vectorized forward map; returns (xs', ys', finite_mask)."""
    m = h.m
    w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    finite = np.abs(w) >= _PIVOT_EPS
    wsafe = np.where(finite, w, 1.0)
    return (
        (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / wsafe,
        (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / wsafe,
        finite,
    )


def art_corners(art: Raster) -> np.ndarray:
    """Corner pixel centers of an art image: TL, TR, BR, BL."""
    w, h = art.width - 1.0, art.height - 1.0
    return np.asarray([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def polygon_to_mask(polygon: Polygon, size: tuple[int, int]) -> BinaryMask:
    """Rasterize a polygon: a pixel is set when its center lies inside (even-odd rule).

    A half-open boundary convention (crossings counted on [y, y+edge)) keeps
    shared edges from double-counting.
    """
    w, h = int(size[0]), int(size[1])
    pts = polygon.vertices
    n = len(pts)
    ys = np.arange(h, dtype=np.float64)[:, None]  # (h, 1)
    xs = np.arange(w, dtype=np.float64)[None, :]  # (1, w)
    inside = np.zeros((h, w), dtype=bool)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if y0 == y1:
            continue
        cond = ((ys >= min(y0, y1)) & (ys < max(y0, y1)))
        t = (ys - y0) / (y1 - y0)
        xcross = x0 + t * (x1 - x0)
        inside ^= cond & (xs < xcross)
    return BinaryMask(inside)


def load_region_file(path) -> tuple[tuple[int, int], list[tuple[str, Polygon]]]:
    """Read a polygon mask file: {"image_size": [w, h], "regions": [{name, polygon}]}."""
    import json
    from pathlib import Path as _Path

    doc = json.loads(_Path(path).read_text())
    size = (int(doc["image_size"][0]), int(doc["image_size"][1]))
    regions = [
        (r.get("name", f"region_{i}"), Polygon(np.asarray(r["polygon"])))
        for i, r in enumerate(doc["regions"])
    ]
    return size, regions


def save_region_file(path, image_size: tuple[int, int], regions: list[tuple[str, Polygon]]) -> None:
    import json
    from pathlib import Path as _Path

    doc = {
        "image_size": [int(image_size[0]), int(image_size[1])],
        "regions": [
            {"name": name, "polygon": poly.vertices.tolist()} for name, poly in regions
        ],
    }
    _Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def warp_into_region(
    art: Raster, h: Homography, target_size: tuple[int, int], region: BinaryMask
) -> Raster:
    """Inverse-map art into the masked region of a target-size RGBA canvas.

    For every set pixel of the region the art is sampled at H^-1 (x, y) with
    bilinear interpolation; alpha is 1 where the source point falls inside
    the art rectangle and 0 everywhere else. Destination pixels are iterated
    (never forward-splatted), so the output has no holes.
    """
    tw, th = int(target_size[0]), int(target_size[1])
    if region.width != tw or region.height != th:
        raise DegenerateGeometryError(
            f"region mask {region.width}x{region.height} does not match target {tw}x{th}"
        )
    hinv = h.inverse()
    out = np.zeros((th, tw, 4), dtype=np.float64)
    ys, xs = np.nonzero(region.bits)
    if len(ys) == 0:
        return Raster(out)
    sx, sy, finite = apply_homography_many(hinv, xs.astype(np.float64), ys.astype(np.float64))
    values, inside = sample_bilinear_many(art.rgb(), sx, sy)
    ok = inside & finite
    out[ys[ok], xs[ok], :3] = values[ok]
    out[ys[ok], xs[ok], 3] = 1.0
    return Raster(out)
