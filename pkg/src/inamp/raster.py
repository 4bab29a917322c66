"""Multi-spectral images and the MSIB band-stack container.

MSIB layout, all integers little-endian::

    magic     4 bytes  b"MSIB"
    version   u16      1
    width     u32
    height    u32
    channels  u16
    dtype     u8       0 (float32)
    reserved  u8       0
    names     per band: length u8 + UTF-8 bytes
    values    float32, row-major in (row, col, channel) order
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BadMagic,
    InvalidShape,
    MissingBand,
    ShapeMismatch,
    TruncatedFile,
    UnsupportedVersion,
)

logger = logging.getLogger(__name__)

MAGIC = b"MSIB"
VERSION = 1
DTYPE_FLOAT32 = 0
HEADER = struct.Struct("<4sHIIHBB")

DEFAULT_BANDS = ("blue", "green", "red", "nir", "swir1", "swir2")
VISIBLE_BANDS = ("blue", "green", "red")

# index -> (minuend role, subtrahend role); the index is (a - b) / (a + b)
INDICES: Dict[str, Tuple[str, str]] = {
    "ndvi": ("nir", "red"),
    "nbr": ("nir", "swir2"),
    "ndbi": ("swir1", "nir"),
}

NORMALIZATIONS = ("per_band_minmax", "fixed_unit")


@dataclass
class MultiSpectralImage:
    """An ``H x W x C`` float32 reflectance stack with named bands."""

    values: np.ndarray
    bands: List[str]

    def __post_init__(self) -> None:  # noqa: D105
        self.values = np.asarray(self.values, dtype=np.float32)
        self.bands = list(self.bands)
        if self.values.ndim != 3 or 0 in self.values.shape:
            raise InvalidShape("image values must be H x W x C, got %s"
                               % (self.values.shape,))
        if len(self.bands) != self.values.shape[2]:
            raise ShapeMismatch(
                "%d band names for %d channels"
                % (len(self.bands), self.values.shape[2]),
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")

    @property
    def height(self) -> int:
        """Rows."""
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        """Columns."""
        return int(self.values.shape[1])

    @property
    def channels(self) -> int:
        """Band count."""
        return int(self.values.shape[2])

    def band(self, name: str) -> np.ndarray:
        """Return the ``H x W`` plane of a named band."""
        try:
            return self.values[:, :, self.bands.index(name)]
        except ValueError:
            raise MissingBand(name) from None


def select_bands(img: MultiSpectralImage, names: Sequence[str]) -> MultiSpectralImage:
    """Keep only ``names``, in the given order."""
    missing = [n for n in names if n not in img.bands]
    if missing:
        raise MissingBand(", ".join(missing))
    idx = [img.bands.index(n) for n in names]
    return MultiSpectralImage(img.values[:, :, idx], list(names))


def write_msib(img: MultiSpectralImage, path: Union[str, Path]) -> None:
    """Write an image as an MSIB file; band names are checked before opening it."""
    names = []
    for name in img.bands:
        encoded = name.encode("utf-8")
        if len(encoded) > 255:
            raise ValueError("band name too long: %r" % name)
        names.append(struct.pack("<B", len(encoded)) + encoded)
    header = HEADER.pack(
        MAGIC, VERSION, img.width, img.height, img.channels, DTYPE_FLOAT32, 0,
    )
    with open(path, "wb") as f:
        f.write(header + b"".join(names))
        f.write(np.ascontiguousarray(img.values, dtype="<f4").tobytes())


def read_msib(path: Union[str, Path]) -> MultiSpectralImage:
    """Read an MSIB file."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagic("%s: not an MSIB file" % path)
    if len(data) < HEADER.size:
        raise TruncatedFile("%s: truncated header" % path)
    _, version, width, height, channels, dtype, _ = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion("%s: MSIB version %d" % (path, version))
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedVersion("%s: MSIB dtype code %d" % (path, dtype))
    pos = HEADER.size
    bands = []
    for _ in range(channels):
        if pos >= len(data):
            raise TruncatedFile("%s: truncated band names" % path)
        length = data[pos]
        name = data[pos + 1 : pos + 1 + length]
        if len(name) != length:
            raise TruncatedFile("%s: truncated band names" % path)
        bands.append(name.decode("utf-8"))
        pos += 1 + length
    n = width * height * channels
    payload = data[pos : pos + 4 * n]
    if len(payload) != 4 * n:
        raise TruncatedFile(
            "%s: expected %d payload bytes, got %d" % (path, 4 * n, len(payload)),
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return MultiSpectralImage(values.astype(np.float32), bands)


def flip_values(values: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    """Reverse the columns and/or rows of an ``[..., H, W, C]`` array."""
    if horizontal:
        values = values[..., :, ::-1, :]
    if vertical:
        values = values[..., ::-1, :, :]
    return np.ascontiguousarray(values)


def augment_flip(
    img: MultiSpectralImage, horizontal: bool, vertical: bool,
) -> MultiSpectralImage:
    """Mirror the pixel grid; band order is untouched."""
    return MultiSpectralImage(flip_values(img.values, horizontal, vertical), img.bands)


def spectral_index(
    img: MultiSpectralImage,
    kind: str,
    band_map: Optional[Mapping[str, str]] = None,
) -> np.ndarray:
    """Normalized-difference index map.

    Params:
        img: source image.
        kind: ``ndvi`` (nir, red), ``nbr`` (nir, swir2) or ``ndbi`` (swir1, nir).
        band_map: role to band name, for images whose bands are named
            differently; unmapped roles use their own name.

    Returns:
        ``H x W`` float64 values in ``[-1, 1]``; a zero denominator gives 0.
    """
    if kind not in INDICES:
        raise ValueError('Invalid index "%s"' % kind)
    band_map = band_map or {}
    a_role, b_role = INDICES[kind]
    a = img.band(band_map.get(a_role, a_role)).astype(np.float64)
    b = img.band(band_map.get(b_role, b_role)).astype(np.float64)
    num = a - b
    den = a + b
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return np.clip(out, -1.0, 1.0)


def normalize(
    img: MultiSpectralImage, mode: str = "per_band_minmax",
) -> MultiSpectralImage:
    """Rescale band values.

    ``per_band_minmax`` maps each band onto ``[0, 1]`` (a constant band becomes
    zeros); ``fixed_unit`` keeps values as they are.
    """
    if mode == "fixed_unit":
        lo, hi = float(img.values.min()), float(img.values.max())
        if lo < 0 or hi > 1:
            logger.warning("values [%g, %g] fall outside the unit range", lo, hi)
        return img
    if mode != "per_band_minmax":
        raise ValueError('Invalid normalization "%s"' % mode)
    v = img.values.astype(np.float64)
    floor = v.min(axis=(0, 1), keepdims=True)
    span = v.max(axis=(0, 1), keepdims=True) - floor
    out = np.zeros_like(v)
    np.divide(v - floor, span, out=out, where=span > 0)
    return MultiSpectralImage(out.astype(np.float32), img.bands)
