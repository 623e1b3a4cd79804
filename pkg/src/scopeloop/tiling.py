"""Tile planning for arbitrary-size frames.

Three strategies, one per task shape:

* classification: non-overlapping grid whose final row/column are shifted
  onto the bottom/right edges so every pixel is covered;
* segmentation: strict grid, residual edge strips excluded;
* detection: overlapping sliding window with edge-shifted final origins so
  objects on tile boundaries appear whole in at least one tile.

Undersized frames are bilinearly upscaled first so the shorter dimension
meets the model's tile size.
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .errors import EmptyFrame, FrameSmallerThanTile, InvalidOverlap
from .frames import Frame, PixelFormat

DEFAULT_DETECTION_OVERLAP = 64


class TilingStrategy(Enum):
    CLASSIFICATION_EDGE_SHIFT = "classification_edge_shift"
    SEGMENTATION_STRICT = "segmentation_strict"
    DETECTION_OVERLAP = "detection_overlap"


@dataclass(frozen=True)
class TileRect:
    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h


@dataclass(frozen=True)
class TilePlan:
    strategy: TilingStrategy
    tiles: tuple[TileRect, ...]
    scale_applied: Fraction = field(default=Fraction(1))

    def __post_init__(self):
        if not self.tiles:
            raise ValueError("a tile plan must contain at least one tile")


def upscale_if_undersized(frame: Frame, min_dim: int) -> tuple[Frame, Fraction]:
    """Uniformly upscale so both dimensions reach ``min_dim``.

    Returns the frame unchanged with scale 1 when already large enough.
    The scale is exact (a Fraction); output dimensions are rounded but the
    shorter dimension always maps exactly onto ``min_dim``.
    """
    if min_dim < 1:
        raise ValueError("min_dim must be >= 1")
    if frame.width < 1 or frame.height < 1:
        raise EmptyFrame("cannot upscale an empty frame")
    short = min(frame.width, frame.height)
    if short >= min_dim:
        return frame, Fraction(1)
    scale = Fraction(min_dim, short)
    new_w = max(min_dim, round(frame.width * scale))
    new_h = max(min_dim, round(frame.height * scale))

    from PIL import Image

    if frame.format is PixelFormat.BGRA:
        mode = "RGBA"
    else:
        mode = "RGB"  # channel order is irrelevant to resampling
    img = Image.fromarray(frame.pixels, mode=mode)
    resized = np.asarray(img.resize((new_w, new_h), Image.BILINEAR), dtype=np.uint8)
    out = Frame(
        width=new_w, height=new_h, pixels=np.ascontiguousarray(resized),
        format=frame.format, timestamp_ns=frame.timestamp_ns,
        source_id=frame.source_id,
    )
    return out, scale


def _check_dims(width: int, height: int, tile_size: int):
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    if width < tile_size or height < tile_size:
        raise FrameSmallerThanTile(
            f"frame {width}x{height} smaller than tile {tile_size} "
            f"(upscale before planning)"
        )


def _edge_shift_origins(extent: int, tile_size: int) -> list[int]:
    # full grid, final origin pulled back onto the far edge
    count = -(-extent // tile_size)  # ceil
    origins = [i * tile_size for i in range(count)]
    if extent % tile_size != 0:
        origins[-1] = extent - tile_size
    return origins


def _sliding_origins(extent: int, tile_size: int, stride: int) -> list[int]:
    origins = []
    x = 0
    while x + tile_size < extent:
        origins.append(x)
        x += stride
    origins.append(extent - tile_size)
    # exact-multiple extents make the shifted origin collide with the grid
    seen, out = set(), []
    for o in origins:
        if o not in seen:
            seen.add(o)
            out.append(o)
    return out


def _grid(xs: list[int], ys: list[int], tile_size: int) -> tuple[TileRect, ...]:
    return tuple(
        TileRect(x=x, y=y, w=tile_size, h=tile_size) for y in ys for x in xs
    )


def plan_classification(width: int, height: int, tile_size: int,
                        scale: Fraction = Fraction(1)) -> TilePlan:
    """Edge-shifted grid covering every pixel, tiles in row-major order."""
    _check_dims(width, height, tile_size)
    xs = _edge_shift_origins(width, tile_size)
    ys = _edge_shift_origins(height, tile_size)
    return TilePlan(
        strategy=TilingStrategy.CLASSIFICATION_EDGE_SHIFT,
        tiles=_grid(xs, ys, tile_size),
        scale_applied=scale,
    )


def plan_segmentation(width: int, height: int, tile_size: int,
                      scale: Fraction = Fraction(1)) -> TilePlan:
    """Strict disjoint grid; residual bottom/right strips are excluded."""
    _check_dims(width, height, tile_size)
    xs = [i * tile_size for i in range(width // tile_size)]
    ys = [i * tile_size for i in range(height // tile_size)]
    return TilePlan(
        strategy=TilingStrategy.SEGMENTATION_STRICT,
        tiles=_grid(xs, ys, tile_size),
        scale_applied=scale,
    )


def plan_detection(width: int, height: int, tile_size: int,
                   overlap: int = DEFAULT_DETECTION_OVERLAP,
                   scale: Fraction = Fraction(1)) -> TilePlan:
    """Overlapping sliding window; adjacent tiles share >= ``overlap`` px."""
    if not 0 <= overlap < tile_size:
        raise InvalidOverlap(
            f"overlap {overlap} must satisfy 0 <= overlap < tile size {tile_size}")
    _check_dims(width, height, tile_size)
    stride = tile_size - overlap
    xs = _sliding_origins(width, tile_size, stride)
    ys = _sliding_origins(height, tile_size, stride)
    return TilePlan(
        strategy=TilingStrategy.DETECTION_OVERLAP,
        tiles=_grid(xs, ys, tile_size),
        scale_applied=scale,
    )


def crop(frame: Frame, rect: TileRect) -> np.ndarray:
    """View of the frame pixels under ``rect`` (no copy)."""
    if rect.x < 0 or rect.y < 0 or rect.x2 > frame.width or rect.y2 > frame.height:
        raise ValueError(f"tile {rect} outside frame {frame.width}x{frame.height}")
    return frame.pixels[rect.y:rect.y2, rect.x:rect.x2]
