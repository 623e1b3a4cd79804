"""Annotation rendering: banded boxes, blended masks, text banners.

All entry points are pure — they copy the input frame and return a new one.
Mask blending is done in 8-bit with round-half-up per channel so outputs
are reproducible across platforms.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .backends import MaskLabel
from .frames import _CHANNEL_ORDER, Frame, frame_from_array
from .pipelines import Band, ClassificationResult, DetectionResult, Ki67Result

logger = logging.getLogger(__name__)

BAND_COLORS_RGB = {
    Band.HIGH: (0, 200, 0),      # green
    Band.MEDIUM: (255, 165, 0),  # orange
    Band.LOW: (40, 90, 255),     # blue
}


@dataclass(frozen=True)
class OverlayStyle:
    mask_alpha: float = 0.5
    positive_color: tuple = (220, 60, 40)
    negative_color: tuple = (70, 110, 230)
    box_thickness: int = 2
    font_scale: float = 1.0
    banner_bg: tuple = (24, 24, 24)
    banner_fg: tuple = (255, 255, 255)

    def __post_init__(self):
        if not 0.0 <= self.mask_alpha <= 1.0:
            raise ValueError(f"mask_alpha {self.mask_alpha} outside [0, 1]")


def _native_color(rgb: tuple, frame: Frame) -> np.ndarray:
    """Reorder an (R, G, B) color into the frame's channel layout."""
    channels = frame.pixels.shape[2]
    out = np.empty(channels, dtype=np.uint8)
    r_i, g_i, b_i = _CHANNEL_ORDER[frame.format]
    out[r_i], out[g_i], out[b_i] = rgb
    if channels == 4:
        out[3] = 255
    return out


def _rebuild(frame: Frame, pixels: np.ndarray) -> Frame:
    return frame_from_array(pixels, frame.format, frame.source_id,
                            timestamp_ns=frame.timestamp_ns)


def _draw_rect(pixels, x1, y1, x2, y2, color, thickness):
    h, w = pixels.shape[:2]
    x1, x2 = max(0, x1), min(w, x2)
    y1, y2 = max(0, y1), min(h, y2)
    if x2 <= x1 or y2 <= y1:
        return
    t = thickness
    pixels[y1:min(y1 + t, y2), x1:x2] = color
    pixels[max(y2 - t, y1):y2, x1:x2] = color
    pixels[y1:y2, x1:min(x1 + t, x2)] = color
    pixels[y1:y2, max(x2 - t, x1):x2] = color


def _font(style: OverlayStyle):
    from PIL import ImageFont

    size = max(8, round(12 * style.font_scale))
    try:
        return ImageFont.load_default(size=size)
    except TypeError:  # older PIL without size kwarg
        return ImageFont.load_default()


def fit_text(text: str, max_width: float, font) -> str:
    """Truncate with an ellipsis so the rendered width fits max_width."""
    if font.getlength(text) <= max_width:
        return text
    while text and font.getlength(text + "…") > max_width:
        text = text[:-1]
    return (text + "…") if text else ""


def _draw_text(pixels, frame, text, x, y, color_rgb, style):
    """Rasterize text via a PIL alpha mask and stamp it onto the buffer."""
    from PIL import Image, ImageDraw

    font = _font(style)
    h, w = pixels.shape[:2]
    text = fit_text(text, w - x - 2, font)
    if not text:
        return 0
    left, top, right, bottom = font.getbbox(text)
    tw, th = right - left, bottom - top
    if tw <= 0 or th <= 0:
        return 0
    stamp = Image.new("L", (tw, th), 0)
    ImageDraw.Draw(stamp).text((-left, -top), text, fill=255, font=font)
    mask = np.asarray(stamp) > 127
    y2, x2 = min(y + th, h), min(x + tw, w)
    if y2 <= y or x2 <= x:
        return 0
    region = pixels[y:y2, x:x2]
    color = _native_color(color_rgb, frame)
    region[mask[: y2 - y, : x2 - x]] = color
    return th


def render_detections(frame: Frame, result: DetectionResult,
                      style: OverlayStyle = OverlayStyle()) -> Frame:
    pixels = frame.pixels.copy()
    for det, band in zip(result.detections, result.bands):
        color = _native_color(BAND_COLORS_RGB[band], frame)
        x1, y1 = int(round(det.box.x)), int(round(det.box.y))
        x2, y2 = int(round(det.box.x + det.box.w)), int(round(det.box.y + det.box.h))
        _draw_rect(pixels, x1, y1, x2, y2, color, style.box_thickness)
        label_y = max(0, y1 - 14)
        _draw_text(pixels, frame, f"{det.score:.2f}", max(0, x1), label_y,
                   BAND_COLORS_RGB[band], style)
    return _rebuild(frame, pixels)


def render_masks(frame: Frame, result: Ki67Result,
                 style: OverlayStyle = OverlayStyle()) -> Frame:
    pixels = frame.pixels.copy()
    alpha = float(style.mask_alpha)
    h, w = pixels.shape[:2]
    for mask in result.masks:
        rgb = (style.positive_color if mask.label is MaskLabel.POSITIVE
               else style.negative_color)
        color = _native_color(rgb, frame)[:3].astype(np.float64)
        rows, cols = mask.pixel_indices()
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        if not inside.all():
            logger.warning("mask extends outside the frame; clipping")
            rows, cols = rows[inside], cols[inside]
        src = pixels[rows, cols, :3].astype(np.float64)
        blended = np.floor(alpha * color + (1.0 - alpha) * src + 0.5)
        pixels[rows, cols, :3] = blended.astype(np.uint8)
    return _rebuild(frame, pixels)


def render_classification_banner(frame: Frame, result: ClassificationResult,
                                 style: OverlayStyle = OverlayStyle()) -> Frame:
    pixels = frame.pixels.copy()
    name = result.predicted_name or "(unnamed)"
    confidence = result.mean_probs.probs[result.predicted]
    text = f"{name}: {confidence:.4f}"
    pad = 4
    font = _font(style)
    _, top, _, bottom = font.getbbox("Ag")
    band_h = (bottom - top) + 2 * pad
    pixels[0:min(band_h, pixels.shape[0]), :] = _native_color(style.banner_bg, frame)
    _draw_text(pixels, frame, text, pad, pad, style.banner_fg, style)
    return _rebuild(frame, pixels)


def render_result(frame: Frame, result, style: OverlayStyle = OverlayStyle()) -> Frame:
    if isinstance(result, DetectionResult):
        return render_detections(frame, result, style)
    if isinstance(result, Ki67Result):
        return render_masks(frame, result, style)
    if isinstance(result, ClassificationResult):
        return render_classification_banner(frame, result, style)
    raise TypeError(f"cannot render a {type(result).__name__}")
