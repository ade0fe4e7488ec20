"""Deterministic 2D rasterization of dot/stroke glyphs onto square canvases.

Glyphs live in normalized [0,1]^2 coordinates (x right, y down) and are
rasterized as hard binary strokes: a pixel belongs to the foreground iff its
center falls inside a dot disc or within half a stroke width of a polyline
segment. No anti-aliasing, so mask unions are exact and renders are
byte-deterministic given (glyph, style, size, seed).

Three stroke-over-background polarities are supported; the random-pixel
background is regenerated i.i.d. uniform per image from the style's seed.
Geometric transforms (translate/scale/rotate) are applied to glyph geometry
before rasterization, never to pixels.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

# Default geometry constants, expressed at the 224-px reference canvas.
REFERENCE_SIZE = 224
DEFAULT_DOT_RADIUS = 4.0 / REFERENCE_SIZE
DEFAULT_STROKE_WIDTH = 2.0 / REFERENCE_SIZE

MAX_TRANSFORM_ATTEMPTS = 100


class CanvasError(ValueError):
    """Raised for degenerate glyphs, invalid styles, or out-of-frame renders."""


class Polarity(str, Enum):
    WHITE_ON_BLACK = "white_on_black"
    BLACK_ON_WHITE = "black_on_white"
    BLACK_ON_RANDOM = "black_on_random_pixels"


@dataclass(frozen=True)
class Dot:
    center: tuple[float, float]
    radius: float = DEFAULT_DOT_RADIUS

    def __post_init__(self):
        if self.radius <= 0:
            raise CanvasError(f"dot radius must be positive, got {self.radius}")
        _check_finite(self.center)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass(frozen=True)
class Polyline:
    vertices: tuple[tuple[float, float], ...]
    stroke_width: float = DEFAULT_STROKE_WIDTH

    def __post_init__(self):
        if self.stroke_width <= 0:
            raise CanvasError(f"stroke width must be positive, got {self.stroke_width}")
        if len(self.vertices) < 2:
            raise CanvasError("polyline needs at least 2 vertices")
        object.__setattr__(self, "vertices", tuple((float(x), float(y)) for x, y in self.vertices))
        for v in self.vertices:
            _check_finite(v)


Primitive = Dot | Polyline


def _check_finite(point):
    x, y = point
    if not (math.isfinite(x) and math.isfinite(y)):
        raise CanvasError(f"coordinate {point} is not finite")


@dataclass(frozen=True)
class Glyph:
    """Ordered list of dot/polyline primitives in normalized coordinates.

    Catalog glyphs live in [0,1]^2 (use assert_normalized); transformed
    glyphs may temporarily leave the unit square before rasterization.
    """

    primitives: tuple[Primitive, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def __len__(self):
        return len(self.primitives)

    def union(self, other: "Glyph") -> "Glyph":
        """Primitive-list union; rasterizes identically to mask-OR of the parts."""
        return Glyph(self.primitives + other.primitives)

    def centers(self) -> np.ndarray:
        """All dot centers and polyline vertices as an (n, 2) array."""
        pts = []
        for p in self.primitives:
            if isinstance(p, Dot):
                pts.append(p.center)
            else:
                pts.extend(p.vertices)
        return np.asarray(pts, dtype=np.float64)

    def assert_normalized(self) -> "Glyph":
        pts = self.centers()
        if len(pts) and not ((pts >= 0.0).all() and (pts <= 1.0).all()):
            raise CanvasError("glyph coordinates outside [0,1]^2")
        return self


EMPTY_GLYPH = Glyph(())


@dataclass(frozen=True)
class RenderStyle:
    polarity: Polarity = Polarity.WHITE_ON_BLACK
    noise_seed: int = 0

    def with_seed(self, seed: int) -> "RenderStyle":
        return replace(self, noise_seed=int(seed))


@dataclass(frozen=True)
class Canvas:
    """Square 8-bit RGB raster; pixels shaped (size, size, 3) uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] != px.shape[1]:
            raise CanvasError(f"canvas must be square RGB, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise CanvasError(f"canvas must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    def gray(self) -> np.ndarray:
        """Mean over channels in [0,1] float64."""
        return self.pixels.mean(axis=2) / 255.0

    def same_pixels(self, other: "Canvas") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


def _pixel_grid(size: int):
    # Pixel centers in normalized coordinates.
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.meshgrid(coords, coords)  # xx varies along axis=1, yy along axis=0


def foreground_mask(glyph: Glyph, size: int) -> np.ndarray:
    """Boolean (size, size) mask of pixels whose centers fall on the glyph."""
    if len(glyph) == 0:
        raise CanvasError("empty glyph")
    xx, yy = _pixel_grid(size)
    mask = np.zeros((size, size), dtype=bool)
    for prim in glyph.primitives:
        if isinstance(prim, Dot):
            cx, cy = prim.center
            mask |= (xx - cx) ** 2 + (yy - cy) ** 2 <= prim.radius**2
        else:
            half = prim.stroke_width / 2.0
            verts = prim.vertices
            for (x0, y0), (x1, y1) in zip(verts[:-1], verts[1:]):
                mask |= _segment_mask(xx, yy, x0, y0, x1, y1, half)
    return mask


def _segment_mask(xx, yy, x0, y0, x1, y1, half):
    dx, dy = x1 - x0, y1 - y0
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return (xx - x0) ** 2 + (yy - y0) ** 2 <= half * half
    t = ((xx - x0) * dx + (yy - y0) * dy) / seg2
    t = np.clip(t, 0.0, 1.0)
    px = x0 + t * dx
    py = y0 + t * dy
    return (xx - px) ** 2 + (yy - py) ** 2 <= half * half


def render_background(style: RenderStyle, size: int) -> np.ndarray:
    """Background-only (size, size, 3) uint8 raster for the given style."""
    if style.polarity is Polarity.WHITE_ON_BLACK:
        return np.zeros((size, size, 3), dtype=np.uint8)
    if style.polarity is Polarity.BLACK_ON_WHITE:
        return np.full((size, size, 3), 255, dtype=np.uint8)
    rng = np.random.default_rng(style.noise_seed)
    gray = rng.integers(0, 256, size=(size, size), dtype=np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def render(glyph: Glyph, style: RenderStyle, size: int) -> Canvas:
    """Rasterize a glyph at the requested polarity.

    Foreground pixels are pure stroke color (255 for white_on_black, else 0);
    the background is filled per style. Deterministic in (glyph, style, size).
    """
    if size < 32:
        raise CanvasError(f"canvas size must be >= 32, got {size}")
    mask = foreground_mask(glyph, size)  # raises "empty glyph" for 0 primitives
    pixels = render_background(style, size)
    fg = 255 if style.polarity is Polarity.WHITE_ON_BLACK else 0
    pixels[mask] = fg
    return Canvas(pixels)


# ---------------------------------------------------------------------------
# Geometric transforms
# ---------------------------------------------------------------------------

class TransformKind(str, Enum):
    NONE = "none"
    TRANSLATE = "translate"
    SCALE = "scale"
    ROTATE = "rotate"


@dataclass(frozen=True)
class TransformSpec:
    kind: TransformKind = TransformKind.NONE
    translate_fraction: float = 0.18
    scale_range: tuple[float, float] = (0.7, 1.3)
    rotate_range: tuple[float, float] = (0.0, 360.0)

    def __post_init__(self):
        if not 0.0 <= self.translate_fraction <= 1.0:
            raise CanvasError("translate_fraction must be in [0,1]")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise CanvasError(f"invalid scale range {self.scale_range}")
        lo, hi = self.rotate_range
        if not (0.0 <= lo <= hi <= 360.0):
            raise CanvasError(f"invalid rotation range {self.rotate_range}")


@dataclass(frozen=True)
class ConcreteTransform:
    """One sampled (dx, dy, scale, theta) draw, in normalized units/degrees.

    Composition order is fixed: scale about canvas center, then rotate about
    canvas center, then translate.
    """

    dx: float = 0.0
    dy: float = 0.0
    scale: float = 1.0
    theta_deg: float = 0.0

    def is_identity(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0 and self.scale == 1.0 and self.theta_deg == 0.0

    def inverse(self) -> "ConcreteTransform":
        # Exact inverse only for single-kind transforms (pure rotate/scale/translate).
        if self.dx or self.dy:
            return ConcreteTransform(dx=-self.dx, dy=-self.dy, scale=1.0, theta_deg=0.0)
        return ConcreteTransform(scale=1.0 / self.scale, theta_deg=-self.theta_deg)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = (pts - 0.5) * self.scale
        if self.theta_deg:
            th = math.radians(self.theta_deg)
            c, s = math.cos(th), math.sin(th)
            rot = np.array([[c, -s], [s, c]])
            out = out @ rot.T
        return out + 0.5 + np.array([self.dx, self.dy])


IDENTITY_TRANSFORM = ConcreteTransform()


def sample_transform(spec: TransformSpec, seed: int) -> ConcreteTransform:
    """Uniform draw within the spec's ranges; deterministic per seed."""
    rng = np.random.default_rng(seed)
    if spec.kind is TransformKind.NONE:
        return IDENTITY_TRANSFORM
    if spec.kind is TransformKind.TRANSLATE:
        f = spec.translate_fraction
        dx, dy = rng.uniform(-f, f, size=2)
        return ConcreteTransform(dx=float(dx), dy=float(dy))
    if spec.kind is TransformKind.SCALE:
        lo, hi = spec.scale_range
        return ConcreteTransform(scale=float(rng.uniform(lo, hi)))
    lo, hi = spec.rotate_range
    return ConcreteTransform(theta_deg=float(rng.uniform(lo, hi)))


def transform_glyph(glyph: Glyph, t: ConcreteTransform) -> Glyph:
    """Apply the transform to glyph geometry exactly (no clamping).

    Raises CanvasError("out of frame") when every primitive lands fully
    outside the unit square; callers resample the transform in that case.
    """
    prims: list[Primitive] = []
    any_inside = False
    for p in glyph.primitives:
        if isinstance(p, Dot):
            (cx, cy), = t.apply_points([p.center])
            r = p.radius * t.scale
            if _disc_touches_unit(cx, cy, r):
                any_inside = True
            prims.append(Dot(center=(float(cx), float(cy)), radius=r))
        else:
            verts = t.apply_points(np.asarray(p.vertices))
            if _polyline_touches_unit(verts):
                any_inside = True
            prims.append(
                Polyline(
                    vertices=tuple((float(x), float(y)) for x, y in verts),
                    stroke_width=p.stroke_width * t.scale,
                )
            )
    if not any_inside:
        raise CanvasError("out of frame")
    return Glyph(tuple(prims))


def _disc_touches_unit(cx, cy, r) -> bool:
    nx = min(1.0, max(0.0, cx))
    ny = min(1.0, max(0.0, cy))
    return (cx - nx) ** 2 + (cy - ny) ** 2 <= r * r or (0 <= cx <= 1 and 0 <= cy <= 1)


def _polyline_touches_unit(verts: np.ndarray) -> bool:
    # Conservative: any vertex inside, or any segment crossing the unit square.
    inside = (verts[:, 0] >= 0) & (verts[:, 0] <= 1) & (verts[:, 1] >= 0) & (verts[:, 1] <= 1)
    if inside.any():
        return True
    for (x0, y0), (x1, y1) in zip(verts[:-1], verts[1:]):
        if _segment_crosses_unit(x0, y0, x1, y1):
            return True
    return False


def _segment_crosses_unit(x0, y0, x1, y1) -> bool:
    # Liang-Barsky clip test against [0,1]^2.
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0), (dx, 1 - x0), (-dy, y0), (dy, 1 - y0)):
        if p == 0:
            if q < 0:
                return False
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


# ---------------------------------------------------------------------------
# Stimulus pairs
# ---------------------------------------------------------------------------

def _image_seed(style: RenderStyle, index: int) -> int:
    # Independent, reproducible per-image background stream.
    ss = np.random.SeedSequence(entropy=style.noise_seed, spawn_key=(index,))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class StimulusPair:
    """Two rendered canvases plus the glyph geometry they came from.

    Geometry is retained so transforms can be re-applied at the vector level
    (apply_transform never resamples pixels).
    """

    image_a: Canvas
    image_b: Canvas
    glyph_a: Glyph | None = None
    glyph_b: Glyph | None = None
    style: RenderStyle | None = None

    def __post_init__(self):
        if self.image_a.size != self.image_b.size:
            raise CanvasError("pair images must share dimensions")

    @property
    def size(self) -> int:
        return self.image_a.size


def render_pair(glyph_a: Glyph, glyph_b: Glyph, style: RenderStyle, size: int) -> StimulusPair:
    """Render a pair with per-image background seeds derived from the style."""
    style_a = style.with_seed(_image_seed(style, 0))
    style_b = style.with_seed(_image_seed(style, 1))
    return StimulusPair(
        image_a=render(glyph_a, style_a, size),
        image_b=render(glyph_b, style_b, size),
        glyph_a=glyph_a,
        glyph_b=glyph_b,
        style=style,
    )


def apply_transform(pair: StimulusPair, t: ConcreteTransform) -> StimulusPair:
    """Apply one transform identically to both images of a pair.

    Works on the stored glyph geometry, then re-renders on the same
    background streams, so an identity transform reproduces the input pair
    bit-for-bit.
    """
    if pair.glyph_a is None or pair.glyph_b is None or pair.style is None:
        raise CanvasError("pair carries no glyph geometry to transform")
    ga = transform_glyph(pair.glyph_a, t)
    gb = transform_glyph(pair.glyph_b, t)
    return render_pair(ga, gb, pair.style, pair.size)


# ---------------------------------------------------------------------------
# Serialization: glyph catalogs as JSON, canvases as PNG
# ---------------------------------------------------------------------------

def glyph_to_json(glyph: Glyph) -> dict:
    prims = []
    for p in glyph.primitives:
        if isinstance(p, Dot):
            prims.append({"type": "dot", "center": list(p.center), "radius": p.radius})
        else:
            prims.append(
                {
                    "type": "polyline",
                    "vertices": [list(v) for v in p.vertices],
                    "stroke_width": p.stroke_width,
                }
            )
    return {"primitives": prims}


def glyph_from_json(obj: dict) -> Glyph:
    prims: list[Primitive] = []
    for entry in obj["primitives"]:
        if entry["type"] == "dot":
            prims.append(Dot(center=tuple(entry["center"]), radius=entry["radius"]))
        elif entry["type"] == "polyline":
            prims.append(
                Polyline(
                    vertices=tuple(tuple(v) for v in entry["vertices"]),
                    stroke_width=entry["stroke_width"],
                )
            )
        else:
            raise CanvasError(f"unknown primitive type {entry['type']!r}")
    return Glyph(tuple(prims))


def dump_glyph_catalog(glyphs: dict[str, Glyph], path) -> None:
    payload = {name: glyph_to_json(g) for name, g in glyphs.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_glyph_catalog(path) -> dict[str, Glyph]:
    with open(path) as fh:
        payload = json.load(fh)
    return {name: glyph_from_json(obj) for name, obj in payload.items()}


def write_png(canvas: Canvas, path) -> None:
    """Minimal 8-bit RGB PNG encoder (filter 0 rows, single IDAT)."""
    px = canvas.pixels
    h, w = px.shape[:2]
    raw = b"".join(b"\x00" + px[row].tobytes() for row in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    data = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )
    with open(path, "wb") as fh:
        fh.write(data)


def read_png(path) -> Canvas:
    """Decode PNGs produced by write_png (8-bit RGB, filters 0/2 supported)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != b"\x89PNG\r\n\x1a\n":
        raise CanvasError("not a PNG file")
    pos = 8
    width = height = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, ctype = struct.unpack(">IIBB", payload[:10])
            if depth != 8 or ctype != 2:
                raise CanvasError("only 8-bit RGB PNGs are supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    raw = zlib.decompress(idat)
    stride = width * 3
    rows = []
    prev = np.zeros(stride, dtype=np.uint8)
    for r in range(height):
        off = r * (stride + 1)
        ftype = raw[off]
        row = np.frombuffer(raw[off + 1 : off + 1 + stride], dtype=np.uint8)
        if ftype == 0:
            cur = row.copy()
        elif ftype == 2:  # Up
            cur = (row.astype(np.int16) + prev).astype(np.uint8)
        else:
            raise CanvasError(f"unsupported PNG filter {ftype}")
        rows.append(cur)
        prev = cur
    px = np.stack(rows).reshape(height, width, 3)
    return Canvas(px)
