"""Image type, JPEG and debug raster codecs, grayscale conversion and
resizing.

Pixels stay 8-bit everywhere in this module; conversion to floats happens
once, in :func:`ocverify.neuralnet.image_to_tensor`.

JPEG files are written baseline, non-optimised, with 4:4:4 chroma (no
subsampling) so that encoding is deterministic and the 8x8 block grid of
every channel lines up with the pixel grid used by error level analysis.
"""
import io
import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from ocverify.exceptions import ConfigurationError, DecodeError, ImageError
from ocverify.helpers import JPEG_MIME, PNM_MIMES, atomic_write, content_type
from ocverify.typed import PathLike

__all__ = [
    "Image",
    "JpegQuality",
    "decode_jpeg",
    "encode_jpeg",
    "decode_pnm",
    "encode_pnm",
    "load_image",
    "save_image",
    "resize",
    "to_grayscale",
]

logger = logging.getLogger(__name__)

#: Smallest side length an image must have to hold one 8x8 JPEG block.
MIN_FORENSIC_SIDE = 8

DEFAULT_QUALITY = 95

_PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")


@dataclass(frozen=True, eq=False)
class Image:
    """Decoded 8-bit raster.

    ``pixels`` is a read-only ``uint8`` array of shape
    ``(height, width, channels)``; row-major, channel-interleaved, exactly
    ``width * height * channels`` samples.

    .. code-block:: python

        img = Image.from_array(np.zeros((480, 640, 3), dtype=np.uint8))
        img.width, img.height, img.channels
        # (640, 480, 3)

    :param width: Width in pixels.
    :type width: int

    :param height: Height in pixels.
    :type height: int

    :param channels: 1 (gray) or 3 (RGB).
    :type channels: int

    :param pixels: Sample array.
    :type pixels: numpy.ndarray

    :raises ImageError: If the sample array does not match the dimensions.
    """

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.channels not in (1, 3):
            raise ImageError("Unsupported channel count %d." % self.channels)
        if self.width < 1 or self.height < 1:
            raise ImageError("Empty image %dx%d." % (self.width, self.height))

        pixels = np.asarray(self.pixels)
        if pixels.dtype != np.uint8:
            raise ImageError("Pixels must be 8-bit, got %s." % pixels.dtype)
        if pixels.size != self.width * self.height * self.channels:
            raise ImageError(
                "Expected %d samples for %dx%dx%d, got %d."
                % (
                    self.width * self.height * self.channels,
                    self.width,
                    self.height,
                    self.channels,
                    pixels.size,
                )
            )

        pixels = np.array(
            pixels.reshape(self.height, self.width, self.channels), copy=True
        )
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Image":
        """Build an image from a ``(h, w)``, ``(h, w, 1)`` or ``(h, w, 3)``
        array. Float arrays are rounded and clipped to ``[0, 255]``.
        """
        array = np.asarray(array)
        if array.dtype != np.uint8:
            array = np.clip(np.floor(array.astype(np.float64) + 0.5), 0, 255)
            array = array.astype(np.uint8)

        if array.ndim == 2:
            array = array[:, :, np.newaxis]
        if array.ndim != 3:
            raise ImageError("Cannot build an image from shape %s." % (array.shape,))

        height, width, channels = array.shape
        return cls(width=width, height=height, channels=channels, pixels=array)

    def to_array(self) -> np.ndarray:
        """Read-only ``(height, width, channels)`` view of the samples."""
        return self.pixels

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    @property
    def size(self):
        return self.width, self.height

    def require_forensic_size(self) -> None:
        """Raise unless the image holds at least one 8x8 block.

        :raises ImageError: If either side is shorter than 8 pixels.
        """
        if self.width < MIN_FORENSIC_SIDE or self.height < MIN_FORENSIC_SIDE:
            raise ImageError(
                "Image %dx%d is smaller than one %dx%d block."
                % (self.width, self.height, MIN_FORENSIC_SIDE, MIN_FORENSIC_SIDE)
            )

    def _to_pil(self) -> PILImage.Image:
        if self.channels == 1:
            return PILImage.fromarray(self.pixels[:, :, 0], mode="L")
        return PILImage.fromarray(self.pixels, mode="RGB")

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Image):
            return (
                self.size == other.size
                and self.channels == other.channels
                and np.array_equal(self.pixels, other.pixels)
            )
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.width, self.height, self.channels, self.tobytes()))

    def __repr__(self) -> str:
        return "<Image %dx%dx%d>" % (self.width, self.height, self.channels)


@dataclass(frozen=True)
class JpegQuality:
    """JPEG quality factor in ``[1, 100]``.

    :raises ConfigurationError: If ``q`` is out of range.
    """

    q: int

    def __post_init__(self) -> None:
        if isinstance(self.q, bool) or int(self.q) != self.q:
            raise ConfigurationError(
                "JPEG quality must be an integer, got %r." % self.q
            )
        if not 1 <= self.q <= 100:
            raise ConfigurationError("JPEG quality %d outside [1, 100]." % self.q)

    @classmethod
    def coerce(cls, value) -> "JpegQuality":
        if isinstance(value, cls):
            return value
        return cls(int(value))

    def __int__(self) -> int:
        return int(self.q)


def _from_pil(pil: PILImage.Image) -> Image:
    if pil.mode == "1":
        pil = pil.convert("L")
    elif pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    return Image.from_array(np.asarray(pil, dtype=np.uint8))


def _scan_jpeg(data: bytes) -> None:
    """Walk the marker segments of a JPEG stream.

    Checks SOI, every segment length, the entropy-coded scans and the final
    EOI without decoding any pixels.

    :raises DecodeError: At the offset where the structure breaks.
    """
    size = len(data)
    if size < 2 or data[0] != 0xFF or data[1] != 0xD8:
        raise DecodeError("Missing JPEG start-of-image marker", 0)

    pos = 2
    while pos < size:
        if data[pos] != 0xFF:
            raise DecodeError("Expected a marker", pos)
        # fill bytes
        while pos < size and data[pos] == 0xFF:
            pos += 1
        if pos >= size:
            break
        marker = data[pos]
        marker_start = pos - 1
        pos += 1

        if marker == 0xD9:
            return
        if 0xD0 <= marker <= 0xD7 or marker == 0x01:
            continue
        if marker == 0x00:
            raise DecodeError("Stray zero marker", marker_start)

        if pos + 2 > size:
            raise DecodeError("Truncated segment length", pos)
        length = (data[pos] << 8) | data[pos + 1]
        if length < 2:
            raise DecodeError("Invalid segment length %d" % length, pos)
        if pos + length > size:
            raise DecodeError("Segment runs past end of stream", pos)
        pos += length

        if marker == 0xDA:
            # Entropy-coded data ends at the first marker that is neither a
            # stuffed zero nor a restart marker.
            while True:
                nxt = data.find(b"\xff", pos)
                if nxt < 0 or nxt + 1 >= size:
                    raise DecodeError("Truncated entropy-coded data", size)
                follower = data[nxt + 1]
                if follower == 0x00 or 0xD0 <= follower <= 0xD7 or follower == 0xFF:
                    pos = nxt + 1 if follower == 0xFF else nxt + 2
                    continue
                pos = nxt
                break

    raise DecodeError("Missing JPEG end-of-image marker", size)


def decode_jpeg(data: bytes) -> Image:
    """Decode a complete JPEG stream.

    Grayscale streams stay single-channel; everything else becomes RGB.

    :param data: JPEG bytes.
    :type data: bytes

    :return: Decoded raster.
    :rtype: :class:`.Image`

    :raises DecodeError: If the stream is empty, malformed or truncated.
    """
    data = bytes(data)
    _scan_jpeg(data)

    try:
        with PILImage.open(io.BytesIO(data)) as pil:
            if pil.format != "JPEG":
                raise DecodeError("Not a JPEG stream (%s)" % pil.format, 0)
            pil.load()
            return _from_pil(pil)
    except DecodeError:
        raise
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as err:
        raise DecodeError("Cannot decode JPEG: %s" % err, len(data))


def encode_jpeg(img: Image, quality) -> bytes:
    """Encode an image as baseline JPEG.

    .. code-block:: python

        data = encode_jpeg(img, JpegQuality(95))
        decode_jpeg(data).size == img.size
        # True

    :param img: Image to encode.
    :type img: :class:`.Image`

    :param quality: Quality factor.
    :type quality: :class:`.JpegQuality` or int

    :return: JPEG bytes; identical for identical ``(img, quality)``.
    :rtype: bytes

    :raises ConfigurationError: If ``quality`` is out of range.
    """
    quality = JpegQuality.coerce(quality)

    buffer = io.BytesIO()
    img._to_pil().save(
        buffer,
        format="JPEG",
        quality=quality.q,
        subsampling=0,
        optimize=False,
        progressive=False,
    )
    return buffer.getvalue()


def decode_pnm(data: bytes) -> Image:
    """Decode the lossless debug raster (binary PGM ``P5`` / PPM ``P6``).

    :raises DecodeError: If the stream is not a readable PNM file.
    """
    data = bytes(data)
    if len(data) < 2 or data[:1] != b"P":
        raise DecodeError("Missing PNM magic", 0)

    try:
        with PILImage.open(io.BytesIO(data)) as pil:
            pil.load()
            return _from_pil(pil)
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as err:
        raise DecodeError("Cannot decode PNM: %s" % err, len(data))


def encode_pnm(img: Image) -> bytes:
    """Encode as binary PGM (1 channel) or PPM (3 channels), maxval 255."""
    buffer = io.BytesIO()
    img._to_pil().save(buffer, format="PPM")
    return buffer.getvalue()


def load_image(path: PathLike) -> Image:
    """Read a JPEG or debug raster file, sniffing its content type.

    :param path: File path.
    :type path: str or Path

    :return: Decoded raster.
    :rtype: :class:`.Image`

    :raises FileNotFoundError: If the file does not exist.
    :raises DecodeError: If the file cannot be decoded.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    mime = content_type(data, filename=path)
    logger.debug("Loading %s as %s", path, mime)
    if mime in PNM_MIMES or str(path).lower().endswith(_PNM_SUFFIXES):
        return decode_pnm(data)
    if mime not in (JPEG_MIME, None, "application/octet-stream"):
        raise DecodeError("Unsupported content type %s" % mime, 0)
    return decode_jpeg(data)


def save_image(img: Image, path: PathLike, quality=DEFAULT_QUALITY) -> None:
    """Write ``img`` as JPEG, or as debug raster for ``.pgm/.ppm/.pnm``."""
    if str(path).lower().endswith(_PNM_SUFFIXES):
        data = encode_pnm(img)
    else:
        data = encode_jpeg(img, quality)

    directory = os.path.dirname(str(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    atomic_write(path, data)


def to_grayscale(img: Image) -> Image:
    """Convert to one channel with ``round(0.299 R + 0.587 G + 0.114 B)``.

    Grayscale input is returned unchanged.
    """
    if img.channels == 1:
        return img

    rgb = img.pixels.astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return Image.from_array(np.floor(luma + 0.5).astype(np.uint8))


def resize(img: Image, width: int, height: int) -> Image:
    """Bilinear resize.

    Resizing to the current size returns the image unchanged.

    :raises ImageError: If a target side is smaller than one pixel.
    """
    if width < 1 or height < 1:
        raise ImageError("Cannot resize to %dx%d." % (width, height))
    if (width, height) == img.size:
        return img

    pil = img._to_pil().resize((int(width), int(height)), resample=PILImage.BILINEAR)
    return _from_pil(pil)
