"""Image representation, file I/O, and sub-pixel sampling.

Intensities are stored as floats in [0, 1]; 8-bit quantization happens only
at file boundaries. Pixel (i, j) is centered at integer coordinates (i, j),
so bilinear sampling at a grid point returns the stored pixel exactly and
the valid sampling domain is [0, w-1] x [0, h-1].
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ShapeMismatchError

_SUPPORTED_SUFFIXES = {".png", ".ppm"}


@dataclass(frozen=True, eq=False)
class Raster:
    """RGB(A) image: float64 array of shape (height, width, channels), values in [0, 1].

    Immutable after construction; the backing array is marked read-only so
    rasters can be shared freely across workers.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] not in (3, 4):
            raise ShapeMismatchError(
                f"raster needs shape (h, w, 3|4), got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatchError(f"raster needs positive size, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("raster intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("raster intensities must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> "Raster":
        """Drop the alpha channel if present."""
        if self.channels == 3:
            return self
        return Raster(self.data[:, :, :3])


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """One boolean per pixel; dimensions must match the raster it annotates."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatchError(f"mask needs shape (h, w), got {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


def load_image(path: str | Path) -> Raster:
    """Load a PNG (or PPM) file, mapping 8-bit samples to [0, 1] by v/255."""
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise FormatError(f"unsupported image format: {path.suffix!r} ({path})")
    try:
        with Image.open(path) as img:
            if img.mode in ("RGBA", "LA", "PA") or "transparency" in img.info:
                img = img.convert("RGBA")
            else:
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise FormatError(f"not a decodable image: {path}") from exc
    return Raster(arr)


def save_image(raster: Raster, path: str | Path) -> None:
    """Write a raster as 8-bit PNG or binary PPM, rounding to the nearest 1/255."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _SUPPORTED_SUFFIXES:
        raise FormatError(f"unsupported image format: {path.suffix!r} ({path})")
    arr = np.rint(raster.data * 255.0).astype(np.uint8)
    if suffix == ".ppm":
        if raster.channels != 3:
            raise FormatError("PPM cannot carry an alpha channel; save as PNG")
        mode = "RGB"
    else:
        mode = "RGB" if raster.channels == 3 else "RGBA"
    Image.fromarray(arr, mode=mode).save(path)


def encode_png(raster: Raster) -> bytes:
    """PNG-encode a raster in memory (8-bit, same quantization as save_image)."""
    import io

    arr = np.rint(raster.data * 255.0).astype(np.uint8)
    mode = "RGB" if raster.channels == 3 else "RGBA"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> Raster:
    """Decode an in-memory PNG to a raster."""
    import io

    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.mode in ("RGBA", "LA", "PA") or "transparency" in img.info:
                img = img.convert("RGBA")
            else:
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise FormatError("not a decodable PNG payload") from exc
    return Raster(arr)


def load_mask(path: str | Path) -> BinaryMask:
    """Load a mask image; any nonzero pixel counts as set."""
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise FormatError(f"unsupported mask format: {path.suffix!r} ({path})")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except UnidentifiedImageError as exc:
        raise FormatError(f"not a decodable image: {path}") from exc
    return BinaryMask(arr != 0)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path))


def sample_bilinear(raster: Raster, x: float, y: float) -> np.ndarray | None:
    """Bilinear interpolation of the 4 nearest pixel centers.

    Returns the per-channel intensity at (x, y), or None when the point lies
    outside [0, w-1] x [0, h-1] (absent, never clamped).
    """
    values, inside = sample_bilinear_many(
        raster, np.asarray([x], dtype=np.float64), np.asarray([y], dtype=np.float64)
    )
    if not inside[0]:
        return None
    return values[0]


def sample_bilinear_many(
    raster: Raster, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling.

    Returns (values, inside): values has shape (n, channels) and is zero
    wherever inside is False.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    w, h = raster.width, raster.height
    inside = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)

    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    # keep the +1 neighbor in range; fractional part is 0 there anyway
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[:, None]
    fy = (yc - y0)[:, None]

    d = raster.data
    top = d[y0, x0] * (1.0 - fx) + d[y0, x1] * fx
    bot = d[y1, x0] * (1.0 - fx) + d[y1, x1] * fx
    values = top * (1.0 - fy) + bot * fy
    values[~inside] = 0.0
    return values, inside


# -- 16-bit PNG (color type 2, bit depth 16) --------------------------------
#
# Pillow has no 16-bit-per-channel RGB mode, and signed perturbation planes
# need more than 8 bits, so these two helpers implement the minimal subset
# of the PNG spec required for lossless float round-trips at 1/65535.


def save_rgb16_png(values: np.ndarray, path: str | Path) -> None:
    """Write an (h, w, 3) float array in [0, 1] as a 16-bit RGB PNG."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatchError(f"need shape (h, w, 3), got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("values must lie in [0, 1]")
    h, w, _ = arr.shape
    samples = np.rint(arr * 65535.0).astype(">u2")
    raw = samples.tobytes()
    stride = w * 6
    # filter byte 0 (None) in front of every scanline
    scanlines = b"".join(
        b"\x00" + raw[y * stride : (y + 1) * stride] for y in range(h)
    )

    def chunk(tag: bytes, body: bytes) -> bytes:
        return (
            struct.pack(">I", len(body))
            + tag
            + body
            + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0)
    blob = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(scanlines, 9))
        + chunk(b"IEND", b"")
    )
    Path(path).write_bytes(blob)


def load_rgb16_png(path: str | Path) -> np.ndarray:
    """Read a 16-bit RGB PNG written by save_rgb16_png back to floats in [0, 1]."""
    blob = Path(path).read_bytes()
    if blob[:8] != b"\x89PNG\r\n\x1a\n":
        raise FormatError(f"not a PNG file: {path}")
    pos = 8
    width = height = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        body = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, ctype, _, _, interlace = struct.unpack(
                ">IIBBBBB", body
            )
            if depth != 16 or ctype != 2 or interlace != 0:
                raise FormatError("expected non-interlaced 16-bit RGB PNG")
        elif tag == b"IDAT":
            idat += body
        elif tag == b"IEND":
            break
    if width is None:
        raise FormatError(f"PNG missing IHDR: {path}")
    raw = zlib.decompress(idat)
    stride = width * 6
    out = np.empty((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    bpp = 6
    for y in range(height):
        ftype = raw[y * (stride + 1)]
        line = np.frombuffer(
            raw, dtype=np.uint8, count=stride, offset=y * (stride + 1) + 1
        ).copy()
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            line = (line + prev) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = int(line[i - bpp]) if i >= bpp else 0
                line[i] = (line[i] + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                a = int(line[i - bpp]) if i >= bpp else 0
                b = int(prev[i])
                c = int(prev[i - bpp]) if i >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if pa <= pb and pa <= pc else (b if pb <= pc else c)
                line[i] = (line[i] + pred) & 0xFF
        else:
            raise FormatError(f"unknown PNG filter type {ftype}")
        out[y] = line
        prev = line
    samples = out.reshape(height, width, 3, 2)
    values = (samples[..., 0].astype(np.uint32) << 8) | samples[..., 1]
    return values.astype(np.float64) / 65535.0
