"""Visual-prompt annotation: draw a hollow bounding box onto image bytes.

The box outline is a band of ``thickness`` pixels thick, drawn inward from
the box perimeter, so the set of touched pixels is exactly

    {(px, py) inside the clamped box : px or py within `thickness` of an edge}

and everything outside that band stays bit-identical to the input.  Output is
always PNG so repeated annotation is lossless.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .corpus import SceneGraphObject


class AnnotationError(Exception):
    pass


@dataclass(frozen=True)
class AnnotationStyle:
    color: tuple[int, int, int] = (255, 0, 0)
    thickness: int = 3

    def __post_init__(self) -> None:
        if self.thickness < 1:
            raise AnnotationError("thickness must be >= 1")


DEFAULT_STYLE = AnnotationStyle()


def _decode(image_bytes: bytes) -> Image.Image:
    if not image_bytes:
        raise AnnotationError("empty image payload")
    try:
        im = Image.open(io.BytesIO(image_bytes))
        im.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise AnnotationError(f"undecodable image bytes: {exc}") from exc
    return im


def _encode_png(im: Image.Image) -> bytes:
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def band_mask(
    width: int, height: int, x: int, y: int, w: int, h: int, thickness: int
) -> np.ndarray:
    """Boolean (height, width) mask of the perimeter band for a clamped box."""
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, width), min(y + h, height)
    mask = np.zeros((height, width), dtype=bool)
    if x1 <= x0 or y1 <= y0:
        return mask
    t = thickness
    mask[y0:y1, x0:x1] = True
    iy0, iy1 = y0 + t, y1 - t
    ix0, ix1 = x0 + t, x1 - t
    if iy1 > iy0 and ix1 > ix0:
        mask[iy0:iy1, ix0:ix1] = False
    return mask


def annotate_bbox(
    image_bytes: bytes,
    box: SceneGraphObject,
    style: AnnotationStyle = DEFAULT_STYLE,
) -> bytes:
    """Draw the box outline in the style's color and return PNG bytes.

    The box is clamped to the image; clamping to zero area is an error.
    Dimensions never change, and re-annotating with the same box and style is
    a pixel-level no-op.
    """
    im = _decode(image_bytes)
    if im.mode != "RGB":
        im = im.convert("RGB")
    width, height = im.size

    mask = band_mask(width, height, box.x, box.y, box.w, box.h, style.thickness)
    if not mask.any():
        raise AnnotationError(
            f"box ({box.x},{box.y},{box.w},{box.h}) has no area inside a "
            f"{width}x{height} image"
        )

    pixels = np.asarray(im).copy()
    pixels[mask] = np.array(style.color, dtype=np.uint8)
    return _encode_png(Image.fromarray(pixels, mode="RGB"))


def encode_for_transport(image_bytes: bytes) -> str:
    """Base64 of a lossless PNG re-encoding of the image.

    Decoding the result reproduces the pixel grid exactly, whatever container
    the input used.
    """
    im = _decode(image_bytes)
    if im.mode not in ("RGB", "RGBA", "L"):
        im = im.convert("RGB")
    return base64.b64encode(_encode_png(im)).decode("ascii")


def decode_transport(payload: str) -> bytes:
    return base64.b64decode(payload.encode("ascii"))
