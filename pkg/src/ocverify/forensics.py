"""Error level analysis.

A JPEG is recompressed at a known quality and compared with itself. Areas
that went through the same compression history as the rest of the picture
settle to similar error levels; pasted-in regions stand out. The decision
works on the mean absolute error of each 8x8 block, the JPEG block grid.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum, unique
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from ocverify import messages
from ocverify.exceptions import ConfigurationError
from ocverify.imaging import Image, JpegQuality, decode_jpeg, encode_jpeg
from ocverify.typed import BlockCoord, Rect

__all__ = [
    "ElaConfig",
    "ElaMap",
    "ElaReport",
    "ElaVerdict",
    "block_recall",
    "check_image_forgery",
    "classify_forgery",
    "compute_ela",
    "report_to_json",
]

logger = logging.getLogger(__name__)

BLOCK = 8

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@unique
class ElaVerdict(Enum):
    GENUINE = "genuine"
    FORGED = "forged"


@dataclass(frozen=True)
class ElaConfig:
    """Recompression quality and decision thresholds.

    :param requality: Quality used for the recompression.
    :param outlier_factor: A block is an outlier above this multiple of the
      median block mean.
    :param absolute_floor: ... and above this many 8-bit levels.
    :param min_region: Blocks needed in one 4-connected outlier region.
    :param gain: Amplification of the displayed difference image.
    """

    requality: int = 95
    outlier_factor: float = 2.5
    absolute_floor: float = 1.5
    min_region: int = 4
    gain: float = 20.0

    def __post_init__(self) -> None:
        JpegQuality.coerce(self.requality)
        if self.outlier_factor <= 0:
            raise ConfigurationError("Outlier factor must be > 0.")
        if self.absolute_floor < 0:
            raise ConfigurationError("Absolute floor must be >= 0.")
        if self.min_region < 1:
            raise ConfigurationError("Minimum region must be >= 1 block.")
        if self.gain <= 0:
            raise ConfigurationError("Display gain must be > 0.")


@dataclass(frozen=True, eq=False)
class ElaMap:
    """Mean absolute recompression error of every full 8x8 block.

    ``block_means`` has shape ``(blocks_h, blocks_w)``; partial blocks at
    the right and bottom edges are dropped.
    """

    block_means: np.ndarray
    requality: int

    @property
    def blocks_w(self) -> int:
        return self.block_means.shape[1]

    @property
    def blocks_h(self) -> int:
        return self.block_means.shape[0]


@dataclass(frozen=True)
class ElaReport:
    verdict: ElaVerdict
    suspect_blocks: Tuple[BlockCoord, ...]
    median: float
    maximum: float
    requality: int
    ela_image: Optional[Image] = field(default=None, compare=False, repr=False)

    @property
    def forged(self) -> bool:
        return self.verdict is ElaVerdict.FORGED

    @property
    def stats(self) -> Tuple[float, float]:
        """``(median block mean, max block mean)``."""
        return self.median, self.maximum


def compute_ela(
    jpeg: Union[bytes, Image], requality=95, gain: float = 20.0
) -> Tuple[ElaMap, Image]:
    """Recompress and difference a JPEG.

    .. code-block:: python

        ela_map, ela_image = compute_ela(open('photo.jpg', 'rb').read())
        ela_map.block_means.max()
        # 0.84

    :param jpeg: JPEG bytes, or the image already decoded from them.
    :type jpeg: bytes or :class:`.Image`

    :param requality: (optional) Recompression quality.
    :type requality: :class:`.JpegQuality` or int

    :param gain: (optional) Display amplification for ``ela_image``.
    :type gain: float

    :return: Block map and the amplified difference image (clamped to 255).
    :rtype: tuple

    :raises DecodeError: If ``jpeg`` cannot be decoded.
    :raises ImageError: If the image is smaller than one block.
    """
    quality = JpegQuality.coerce(requality)
    original = jpeg if isinstance(jpeg, Image) else decode_jpeg(jpeg)
    original.require_forensic_size()
    recompressed = decode_jpeg(encode_jpeg(original, quality))

    diff = np.abs(
        original.pixels.astype(np.int16) - recompressed.pixels.astype(np.int16)
    ).astype(np.float64)

    blocks_h, blocks_w = original.height // BLOCK, original.width // BLOCK
    cropped = diff[: blocks_h * BLOCK, : blocks_w * BLOCK, :]
    means = cropped.reshape(blocks_h, BLOCK, blocks_w, BLOCK, -1).mean(axis=(1, 3, 4))

    ela_image = Image.from_array(np.clip(diff * gain, 0, 255).astype(np.uint8))
    return ElaMap(block_means=means, requality=quality.q), ela_image


def classify_forgery(
    ela_map: ElaMap,
    k: float = 2.5,
    absolute_floor: float = 1.5,
    min_region: int = 4,
    ela_image: Optional[Image] = None,
) -> ElaReport:
    """Decide genuine or forged from block error levels.

    Outlier blocks exceed both ``k`` times the median block mean and
    ``absolute_floor``. The image is forged when some 4-connected outlier
    region holds at least ``min_region`` blocks; the reported suspect
    blocks are the members of those regions, listed row by row as
    ``(bx, by)``.

    :return: Report; the suspect set is empty exactly when the verdict is
      genuine.
    :rtype: :class:`.ElaReport`
    """
    means = ela_map.block_means
    median = float(np.median(means))
    maximum = float(means.max())

    outliers = (means > k * median) & (means > absolute_floor)
    labels, count = ndimage.label(outliers, structure=_FOUR_CONNECTED)

    kept = np.zeros(means.shape, dtype=bool)
    if count:
        sizes = np.bincount(labels.ravel())
        large = np.flatnonzero(sizes >= min_region)
        large = large[large > 0]
        kept = np.isin(labels, large)

    rows, cols = np.nonzero(kept)
    suspects = tuple((int(bx), int(by)) for by, bx in zip(rows, cols))
    verdict = ElaVerdict.FORGED if suspects else ElaVerdict.GENUINE

    logger.info(messages.ELA_VERDICT, verdict.value, len(suspects), median, maximum)
    return ElaReport(
        verdict=verdict,
        suspect_blocks=suspects,
        median=median,
        maximum=maximum,
        requality=ela_map.requality,
        ela_image=ela_image,
    )


def check_image_forgery(
    jpeg: Union[bytes, Image], cfg: ElaConfig = ElaConfig()
) -> ElaReport:
    """:func:`compute_ela` followed by :func:`classify_forgery`."""
    ela_map, ela_image = compute_ela(jpeg, cfg.requality, cfg.gain)
    return classify_forgery(
        ela_map,
        k=cfg.outlier_factor,
        absolute_floor=cfg.absolute_floor,
        min_region=cfg.min_region,
        ela_image=ela_image,
    )


def report_to_dict(report: ElaReport) -> dict:
    return {
        "verdict": report.verdict.value,
        "median_block_mean": round(report.median, 6),
        "max_block_mean": round(report.maximum, 6),
        "requality": report.requality,
        "suspect_blocks": [list(block) for block in report.suspect_blocks],
    }


def report_to_json(report: ElaReport) -> str:
    """Stable JSON text of a report (sorted keys)."""
    return json.dumps(report_to_dict(report), sort_keys=True)


def blocks_inside(rect: Rect) -> List[BlockCoord]:
    """Blocks lying fully inside the pixel rectangle ``(x, y, w, h)``."""
    x, y, w, h = rect
    first_bx, first_by = -(-x // BLOCK), -(-y // BLOCK)
    last_bx, last_by = (x + w) // BLOCK, (y + h) // BLOCK
    return [
        (bx, by)
        for by in range(first_by, last_by)
        for bx in range(first_bx, last_bx)
    ]


def block_recall(report: ElaReport, rect: Rect) -> float:
    """Share of the blocks inside ``rect`` that the report flags."""
    truth = blocks_inside(rect)
    if not truth:
        return 0.0
    flagged = set(report.suspect_blocks)
    return sum(1 for block in truth if block in flagged) / len(truth)
