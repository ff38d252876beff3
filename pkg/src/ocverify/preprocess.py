"""Background removal and data augmentation.

Background removal follows the classic outline-and-fill recipe: Canny
edges, a square dilation to close small contour gaps, then a flood fill from
the image border. Whatever the fill reaches is background and is painted
black; everything else is copied through untouched.
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from ocverify.exceptions import ConfigurationError, ImageError
from ocverify.helpers import derive_rng
from ocverify.imaging import Image, to_grayscale

__all__ = [
    "AugmentConfig",
    "BinaryMap",
    "CannyParams",
    "augment",
    "augment_many",
    "background_mask",
    "canny_edges",
    "dilate",
    "foreground_mask",
    "remove_background",
    "sobel_magnitude",
]

logger = logging.getLogger(__name__)

DEFAULT_DILATE_K = 2

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
_EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True, eq=False)
class BinaryMap:
    """One boolean per pixel, shape ``(height, width)``."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ImageError("Binary map must be 2-D, got shape %s." % (bits.shape,))
        bits = np.array(bits, dtype=bool, copy=True)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMap":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def issubset(self, other: "BinaryMap") -> bool:
        return bool(np.all(~self.bits | other.bits))

    def __or__(self, other: "BinaryMap") -> "BinaryMap":
        return BinaryMap(self.bits | other.bits)

    def __and__(self, other: "BinaryMap") -> "BinaryMap":
        return BinaryMap(self.bits & other.bits)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, BinaryMap):
            return np.array_equal(self.bits, other.bits)
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.bits.shape, self.bits.tobytes()))

    def __repr__(self) -> str:
        return "<BinaryMap %dx%d set=%d>" % (self.width, self.height, self.count())


@dataclass(frozen=True)
class CannyParams:
    """Canny detector settings. Thresholds are on the raw Sobel magnitude
    of 8-bit intensities, the scale OpenCV and scikit-image use; a clean
    step of height h peaks near 2h at the default sigma.

    :raises ConfigurationError: If ``sigma <= 0`` or ``low >= high``.
    """

    gaussian_sigma: float = 1.4
    low_threshold: float = 30.0
    high_threshold: float = 90.0

    def __post_init__(self) -> None:
        if not self.gaussian_sigma > 0:
            raise ConfigurationError(
                "Gaussian sigma must be positive, got %r." % self.gaussian_sigma
            )
        if not self.low_threshold < self.high_threshold:
            raise ConfigurationError(
                "Low threshold %r must be below high threshold %r."
                % (self.low_threshold, self.high_threshold)
            )


@dataclass(frozen=True)
class AugmentConfig:
    """Affine and elastic augmentation parameters.

    Defaults reproduce the augmentation table used for the one-shot
    experiments: flip 0.5, rotation 0.9 within 20 degrees either way,
    zoom 0.3 in ``[1, 1.3]``, distortion 0.6 on a 4x4 grid with 1 px
    node jitter.

    :raises ConfigurationError: If a probability is outside ``[0, 1]``,
      the zoom range is inverted or a grid side is below 2.
    """

    flip_lr_prob: float = 0.5
    rotate_prob: float = 0.9
    rotate_max_left_deg: float = 20.0
    rotate_max_right_deg: float = 20.0
    zoom_prob: float = 0.3
    zoom_min_factor: float = 1.0
    zoom_max_factor: float = 1.3
    distort_prob: float = 0.6
    distort_grid_w: int = 4
    distort_grid_h: int = 4
    distort_magnitude: float = 1.0
    seed: int = 42

    def __post_init__(self) -> None:
        for name in ("flip_lr_prob", "rotate_prob", "zoom_prob", "distort_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(
                    "Probability %s=%r outside [0, 1]." % (name, value)
                )
        if self.rotate_max_left_deg < 0 or self.rotate_max_right_deg < 0:
            raise ConfigurationError("Rotation limits must be non-negative.")
        if not 0 < self.zoom_min_factor <= self.zoom_max_factor:
            raise ConfigurationError(
                "Zoom range [%r, %r] is invalid."
                % (self.zoom_min_factor, self.zoom_max_factor)
            )
        if self.distort_grid_w < 2 or self.distort_grid_h < 2:
            raise ConfigurationError(
                "Distortion grid %dx%d must be at least 2x2."
                % (self.distort_grid_w, self.distort_grid_h)
            )
        if self.distort_magnitude < 0:
            raise ConfigurationError("Distortion magnitude must be non-negative.")

    @classmethod
    def disabled(cls, seed: int = 42) -> "AugmentConfig":
        """Config whose transforms never fire."""
        return cls(
            flip_lr_prob=0.0,
            rotate_prob=0.0,
            zoom_prob=0.0,
            distort_prob=0.0,
            seed=seed,
        )


def sobel_magnitude(gray: np.ndarray, sigma: float):
    """Smoothed Sobel gradients of a 2-D float array.

    :return: ``(magnitude, gx, gy)``.
    """
    smoothed = ndimage.gaussian_filter(gray, sigma=sigma, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    return np.hypot(gx, gy), gx, gy


def _non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    padded = np.pad(mag, 1, mode="constant")
    height, width = mag.shape

    def shifted(dy: int, dx: int) -> np.ndarray:
        return padded[1 + dy : 1 + dy + height, 1 + dx : 1 + dx + width]

    # (row, col) step along the quantised gradient direction
    directions = (
        ((angle < 22.5) | (angle >= 157.5), (0, 1)),
        ((angle >= 22.5) & (angle < 67.5), (1, 1)),
        ((angle >= 67.5) & (angle < 112.5), (1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (1, -1)),
    )

    keep = np.zeros(mag.shape, dtype=bool)
    for selector, (dy, dx) in directions:
        is_max = (mag >= shifted(dy, dx)) & (mag >= shifted(-dy, -dx))
        keep |= selector & is_max
    return keep & (mag > 0)


def canny_edges(gray: Image, params: CannyParams = CannyParams()) -> BinaryMap:
    """Canny edge detector.

    Gaussian smoothing, Sobel gradients, non-maximum suppression over four
    quantised directions and double-threshold hysteresis with
    8-connectivity.

    .. code-block:: python

        edges = canny_edges(to_grayscale(img), CannyParams(low_threshold=20))
        edges.count()
        # 1342

    :param gray: Single-channel image.
    :type gray: :class:`.Image`

    :param params: Detector settings.
    :type params: :class:`.CannyParams`

    :return: Edge pixels.
    :rtype: :class:`.BinaryMap`

    :raises ImageError: If ``gray`` has more than one channel.
    """
    if gray.channels != 1:
        raise ImageError("Canny needs a 1-channel image, got %d." % gray.channels)

    intensity = gray.pixels[:, :, 0].astype(np.float64)
    mag, gx, gy = sobel_magnitude(intensity, params.gaussian_sigma)

    thin = _non_maximum_suppression(mag, gx, gy)
    weak = thin & (mag > params.low_threshold)
    strong = thin & (mag > params.high_threshold)

    labels, count = ndimage.label(weak, structure=_EIGHT_CONNECTED)
    if count == 0:
        return BinaryMap(weak)

    connected = np.unique(labels[strong])
    connected = connected[connected > 0]
    return BinaryMap(np.isin(labels, connected))


def dilate(edges: BinaryMap, kernel_half_width: int = DEFAULT_DILATE_K) -> BinaryMap:
    """Square dilation with a ``(2k+1) x (2k+1)`` support.

    :raises ConfigurationError: If ``kernel_half_width < 1``.
    """
    if kernel_half_width < 1:
        raise ConfigurationError(
            "Dilation half-width must be >= 1, got %r." % kernel_half_width
        )
    side = 2 * int(kernel_half_width) + 1
    structure = np.ones((side, side), dtype=bool)
    return BinaryMap(ndimage.binary_dilation(edges.bits, structure=structure))


def background_mask(edges: BinaryMap) -> BinaryMap:
    """Pixels 4-connected to the image border without crossing an edge."""
    free = ~edges.bits
    labels, count = ndimage.label(free, structure=_FOUR_CONNECTED)
    if count == 0:
        return BinaryMap.empty(edges.width, edges.height)

    border = np.concatenate(
        (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1])
    )
    seeds = np.unique(border)
    seeds = seeds[seeds > 0]
    return BinaryMap(np.isin(labels, seeds))


def foreground_mask(
    img: Image,
    canny: CannyParams = CannyParams(),
    dilate_k: int = DEFAULT_DILATE_K,
) -> BinaryMap:
    edges = dilate(canny_edges(to_grayscale(img), canny), dilate_k)
    return BinaryMap(~background_mask(edges).bits)


def remove_background(
    img: Image,
    canny: CannyParams = CannyParams(),
    dilate_k: int = DEFAULT_DILATE_K,
    enabled: bool = True,
) -> Image:
    """Paint the background black.

    .. code-block:: python

        face = remove_background(load_image('0001_PRE.jpg'))

    :param img: Input image, 1 or 3 channels.
    :type img: :class:`.Image`

    :param canny: (optional) Edge detector settings.
    :type canny: :class:`.CannyParams`

    :param dilate_k: (optional) Dilation half-width in pixels.
    :type dilate_k: int

    :param enabled: (optional) ``False`` returns ``img`` unchanged.
    :type enabled: bool

    :return: Copy of ``img`` with background pixels set to 0 in every
      channel. Foreground samples are bit-identical to the input.
    :rtype: :class:`.Image`
    """
    if not enabled:
        return img

    foreground = foreground_mask(img, canny, dilate_k).bits
    pixels = np.array(img.pixels, copy=True)
    pixels[~foreground] = 0

    logger.debug(
        "Foreground covers %.1f%% of %dx%d image",
        100.0 * foreground.mean(),
        img.width,
        img.height,
    )
    return Image.from_array(pixels)


def _warp(channels: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    out = np.empty_like(channels)
    for c in range(channels.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(
            channels[:, :, c], [rows, cols], order=1, mode="constant", cval=0.0
        )
    return out


def _rotate(channels: np.ndarray, degrees: float) -> np.ndarray:
    height, width = channels.shape[:2]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    # inverse mapping: output pixel -> source pixel
    src_cols = cos * (cols - cx) - sin * (rows - cy) + cx
    src_rows = sin * (cols - cx) + cos * (rows - cy) + cy
    return _warp(channels, src_rows, src_cols)


def _zoom(channels: np.ndarray, factor: float) -> np.ndarray:
    height, width = channels.shape[:2]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    return _warp(channels, (rows - cy) / factor + cy, (cols - cx) / factor + cx)


def _distort(channels: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Warp by a displacement mesh.

    ``offsets`` has shape ``(2, grid_h + 1, grid_w + 1)`` holding row and
    column displacements of every grid node; border nodes are zero.
    """
    height, width = channels.shape[:2]
    grid_h, grid_w = offsets.shape[1] - 1, offsets.shape[2] - 1
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)

    # pixel position in grid-node units
    node_rows = rows * grid_h / max(height - 1, 1)
    node_cols = cols * grid_w / max(width - 1, 1)
    d_rows = ndimage.map_coordinates(offsets[0], [node_rows, node_cols], order=1)
    d_cols = ndimage.map_coordinates(offsets[1], [node_rows, node_cols], order=1)
    return _warp(channels, rows + d_rows, cols + d_cols)


def augment(img: Image, cfg: AugmentConfig, *stream: int) -> Image:
    """Random flip, rotation, zoom and grid distortion, in that order.

    Every transform fires independently with its probability. All random
    draws happen whether or not a transform fires, so one probability can
    change without shifting the parameters of the others.

    .. code-block:: python

        copies = [augment(face, AugmentConfig(), image_index, k) for k in range(8)]

    :param img: Source image.
    :type img: :class:`.Image`

    :param cfg: Augmentation parameters, seed included.
    :type cfg: :class:`.AugmentConfig`

    :param stream: (optional) Extra integers (image index, copy index) that
      select an independent random stream for this call.
    :type stream: int

    :return: Augmented image of the same size; exposed corners are black.
    :rtype: :class:`.Image`
    """
    rng = derive_rng(cfg.seed, *stream)

    flip = rng.random() < cfg.flip_lr_prob
    rotate = rng.random() < cfg.rotate_prob
    angle = rng.uniform(-cfg.rotate_max_left_deg, cfg.rotate_max_right_deg)
    zoom = rng.random() < cfg.zoom_prob
    factor = rng.uniform(cfg.zoom_min_factor, cfg.zoom_max_factor)
    distort = rng.random() < cfg.distort_prob
    jitter = rng.uniform(
        -cfg.distort_magnitude,
        cfg.distort_magnitude,
        size=(2, cfg.distort_grid_h + 1, cfg.distort_grid_w + 1),
    )

    if not (flip or rotate or zoom or distort):
        return img

    if flip and not (rotate or zoom or distort):
        return Image.from_array(img.pixels[:, ::-1, :])

    channels = img.pixels.astype(np.float64)
    if flip:
        channels = channels[:, ::-1, :]
    if rotate:
        channels = _rotate(channels, angle)
    if zoom:
        channels = _zoom(channels, factor)
    if distort:
        jitter[:, 0, :] = 0.0
        jitter[:, -1, :] = 0.0
        jitter[:, :, 0] = 0.0
        jitter[:, :, -1] = 0.0
        channels = _distort(channels, jitter)

    return Image.from_array(channels)


def augment_many(
    img: Image, cfg: AugmentConfig, copies: int, base_index: int = 0
) -> List[Image]:
    """``copies`` augmentations of one original, stream ``(base_index, k)``."""
    if copies < 0:
        raise ConfigurationError("Augmented copy count must be >= 0.")
    return [augment(img, cfg, base_index, k) for k in range(copies)]
