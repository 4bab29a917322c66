"""Binary portable graymap ("P5", maxval 255) rasters."""

import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import MsibError, ShapeMismatch

logger = logging.getLogger(__name__)


def to_gray(channel: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D array to ``uint8`` in ``[0, 255]``.

    A constant array maps to zeros.
    """
    channel = np.asarray(channel, dtype=np.float64)
    lo, hi = float(channel.min()), float(channel.max())
    if hi <= lo:
        return np.zeros(channel.shape, dtype=np.uint8)
    return np.rint((channel - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def write_pgm(path: Union[str, Path], pixels: np.ndarray) -> None:
    """Write an ``H x W`` ``uint8`` array as a binary graymap."""
    if pixels.ndim != 2:
        raise ShapeMismatch("graymap needs a 2-D array, got %s" % (pixels.shape,))
    image = Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8))
    image.save(path, format="PPM")
    logger.debug("wrote %dx%d graymap %s", image.width, image.height, path)


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read an 8-bit graymap into an ``H x W`` ``uint8`` array."""
    try:
        with Image.open(path) as image:
            image.load()
            kind, mode = image.format, image.mode
            pixels = np.array(image)
    except UnidentifiedImageError as err:
        raise MsibError("%s is not a graymap" % path) from err
    except FileNotFoundError:
        raise
    except (OSError, SyntaxError, ValueError) as err:
        raise MsibError("truncated graymap %s: %s" % (path, err)) from err
    if kind != "PPM" or mode != "L":
        raise MsibError("%s is not an 8-bit graymap (%s %s)" % (path, kind, mode))
    return pixels.astype(np.uint8, copy=False)
