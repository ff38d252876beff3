"""Synthetic stand-ins for real photographs.

Identities are parametric cartoon faces (head ellipse, two eyes, a mouth)
on a smooth background. The post-operation photograph adds an eye patch
with a strap over one eye and a small brightness shift. Forensic fixtures
pair a smooth JPEG carrier with a copy that has a noisy, differently
compressed rectangle pasted in.

All intensities stay inside ``[24, 232]`` so that JPEG ringing never
clips, which keeps genuine recompression errors close to zero.
"""
import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ocverify.exceptions import ConfigurationError
from ocverify.helpers import derive_rng
from ocverify.imaging import Image, JpegQuality, decode_jpeg, encode_jpeg, save_image
from ocverify.preprocess import AugmentConfig, augment
from ocverify.structures import Phase
from ocverify.typed import PathLike, Rect

__all__ = [
    "SynthIdentitySpec",
    "check_separability",
    "gen_forgery_fixture",
    "gen_identity_pair",
    "patch_box",
    "write_forgery_corpus",
    "write_synthetic_dataset",
]

logger = logging.getLogger(__name__)

MIN_CANVAS = 64
DEFAULT_CANVAS = 128
SPLICE_SIDE = 32

#: Largest absolute brightness shift of a post-operation photograph.
JITTER_LEVELS = 6

_PATCH_TONE = 38.0


@dataclass(frozen=True)
class SynthIdentitySpec:
    """Face geometry and tones of one identity.

    Geometry is relative to the canvas side; tones are 8-bit levels.
    """

    seed: int
    head_cx: float
    head_cy: float
    head_ax: float
    head_ay: float
    eye_dx: float
    eye_dy: float
    eye_r: float
    mouth_dy: float
    mouth_w: float
    mouth_curve: float
    skin_tone: float
    skin_tint: Tuple[float, float, float]
    background_tone: float
    background_slope: float
    eye_tone: float
    mouth_tone: float
    patch_right: bool

    @classmethod
    def from_seed(cls, seed: int) -> "SynthIdentitySpec":
        rng = derive_rng(seed, 0xFACE)
        skin = rng.uniform(150.0, 205.0)
        return cls(
            seed=int(seed),
            head_cx=rng.uniform(0.47, 0.53),
            head_cy=rng.uniform(0.48, 0.54),
            head_ax=rng.uniform(0.26, 0.34),
            head_ay=rng.uniform(0.34, 0.42),
            eye_dx=rng.uniform(0.09, 0.13),
            eye_dy=rng.uniform(-0.12, -0.06),
            eye_r=rng.uniform(0.035, 0.055),
            mouth_dy=rng.uniform(0.12, 0.18),
            mouth_w=rng.uniform(0.08, 0.14),
            mouth_curve=rng.uniform(-0.04, 0.04),
            skin_tone=skin,
            skin_tint=tuple(rng.uniform(-12.0, 12.0, size=3)),
            background_tone=rng.uniform(45.0, skin - 70.0),
            background_slope=rng.uniform(-15.0, 15.0),
            eye_tone=rng.uniform(40.0, 70.0),
            mouth_tone=rng.uniform(85.0, 115.0),
            patch_right=bool(rng.integers(2)),
        )

    def eyes_inside_head(self) -> bool:
        """Both eye disks lie inside the head ellipse."""
        dx = self.eye_dx + self.eye_r
        dy = abs(self.eye_dy) + self.eye_r
        return (dx / self.head_ax) ** 2 + (dy / self.head_ay) ** 2 < 1.0


def _check_canvas(canvas: int) -> None:
    if canvas < MIN_CANVAS:
        raise ConfigurationError(
            "Canvas must be at least %d pixels, got %d." % (MIN_CANVAS, canvas)
        )


def _render_face(spec: SynthIdentitySpec, canvas: int) -> np.ndarray:
    rows, cols = np.mgrid[0:canvas, 0:canvas].astype(np.float64) / canvas
    cx, cy = spec.head_cx, spec.head_cy

    gray = spec.background_tone + spec.background_slope * (cols - 0.5)
    head = ((cols - cx) / spec.head_ax) ** 2 + ((rows - cy) / spec.head_ay) ** 2 <= 1.0
    gray = np.where(head, spec.skin_tone, gray)

    eye_y = cy + spec.eye_dy
    for side in (-1.0, 1.0):
        eye = (cols - (cx + side * spec.eye_dx)) ** 2 + (rows - eye_y) ** 2
        gray = np.where(eye <= spec.eye_r ** 2, spec.eye_tone, gray)

    u = (cols - cx) / spec.mouth_w
    mouth_line = cy + spec.mouth_dy + spec.mouth_curve * (u ** 2 - 0.5)
    mouth = (np.abs(u) <= 1.0) & (np.abs(rows - mouth_line) <= 0.012)
    gray = np.where(mouth, spec.mouth_tone, gray)

    tint = np.where(head[..., np.newaxis], np.array(spec.skin_tint), 0.0)
    rgb = gray[..., np.newaxis] + tint

    noise = derive_rng(spec.seed, 0xB6).normal(0.0, 1.0, size=rgb.shape)
    rgb = rgb + np.where(head[..., np.newaxis], 0.0, noise)

    for c in range(3):
        rgb[:, :, c] = ndimage.gaussian_filter(rgb[:, :, c], sigma=1.0, mode="nearest")
    return np.clip(rgb, 30.0, 226.0)


def patch_box(spec: SynthIdentitySpec, canvas: int) -> Rect:
    """Pixel rectangle ``(x, y, w, h)`` enclosing the eye patch and strap."""
    side = 1.0 if spec.patch_right else -1.0
    eye_x = (spec.head_cx + side * spec.eye_dx) * canvas
    eye_y = (spec.head_cy + spec.eye_dy) * canvas
    half_w = 1.8 * spec.eye_r * canvas
    half_h = 1.5 * spec.eye_r * canvas

    head_edge = (spec.head_cx + side * spec.head_ax) * canvas
    if spec.patch_right:
        left, right = eye_x - half_w, max(eye_x + half_w, head_edge)
    else:
        left, right = min(eye_x - half_w, head_edge), eye_x + half_w

    x0 = max(0, int(np.floor(left)))
    x1 = min(canvas, int(np.ceil(right)) + 1)
    y0 = max(0, int(np.floor(eye_y - half_h)))
    y1 = min(canvas, int(np.ceil(eye_y + half_h)) + 1)
    return x0, y0, x1 - x0, y1 - y0


def _apply_patch(rgb: np.ndarray, spec: SynthIdentitySpec, canvas: int) -> np.ndarray:
    side = 1.0 if spec.patch_right else -1.0
    eye_x = (spec.head_cx + side * spec.eye_dx) * canvas
    eye_y = (spec.head_cy + spec.eye_dy) * canvas
    half_w = 1.8 * spec.eye_r * canvas
    half_h = 1.5 * spec.eye_r * canvas

    rows, cols = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    patch = (np.abs(cols - eye_x) <= half_w) & (np.abs(rows - eye_y) <= half_h)

    strap_half = max(1.0, canvas / 80.0)
    head_edge = (spec.head_cx + side * spec.head_ax) * canvas
    if spec.patch_right:
        along = (cols >= eye_x) & (cols <= head_edge)
    else:
        along = (cols <= eye_x) & (cols >= head_edge)
    strap = along & (np.abs(rows - eye_y) <= strap_half)

    x, y, w, h = patch_box(spec, canvas)
    inside = np.zeros((canvas, canvas), dtype=bool)
    inside[y : y + h, x : x + w] = True

    out = rgb.copy()
    out[(patch | strap) & inside] = _PATCH_TONE
    return out


def gen_identity_pair(
    spec: SynthIdentitySpec, canvas: int = DEFAULT_CANVAS
) -> Tuple[Image, Image]:
    """Render the pre- and post-operation photographs of one identity.

    The post photograph equals the pre photograph plus one constant
    brightness shift of at most :data:`JITTER_LEVELS` levels, except inside
    :func:`patch_box`.

    :param spec: Identity parameters.
    :type spec: :class:`.SynthIdentitySpec`

    :param canvas: (optional) Square canvas side, at least 64.
    :type canvas: int

    :return: ``(pre, post)`` RGB images.
    :rtype: tuple

    :raises ConfigurationError: If ``canvas`` is below 64.
    """
    _check_canvas(canvas)
    face = np.floor(_render_face(spec, canvas) + 0.5)

    jitter_rng = derive_rng(spec.seed, 0x9057)
    jitter = float(jitter_rng.integers(-JITTER_LEVELS, JITTER_LEVELS + 1))
    post = _apply_patch(face, spec, canvas) + jitter
    return Image.from_array(face), Image.from_array(post)


def _carrier_scene(seed: int, width: int, height: int) -> np.ndarray:
    rng = derive_rng(seed, 0xCA)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    scene = np.empty((height, width, 3))
    for c in range(3):
        fx, fy = rng.uniform(0.5, 1.5, size=2)
        gx, gy = rng.uniform(0.3, 1.0, size=2)
        phase_a, phase_b = rng.uniform(0.0, 2.0 * np.pi, size=2)
        wave_a = 2.0 * np.pi * (fx * cols / width + fy * rows / height) + phase_a
        wave_b = 2.0 * np.pi * (gx * cols / width - gy * rows / height) + phase_b
        scene[:, :, c] = 128.0 + 50.0 * np.sin(wave_a) + 25.0 * np.cos(wave_b)
    return np.clip(scene, 30.0, 226.0)


def gen_forgery_fixture(
    carrier_seed: int,
    splice_seed: int,
    q_carrier=75,
    q_splice=95,
    width: int = 256,
    height: int = 192,
) -> Tuple[bytes, bytes, Rect]:
    """Build a genuine JPEG and a spliced copy of it.

    The carrier is a smooth colour scene saved at ``q_carrier``. A
    32x32 rectangle of a noise texture saved at ``q_splice`` is pasted in
    on the 8x8 grid and the result is saved at ``q_carrier`` again.

    :return: ``(genuine_jpeg, forged_jpeg, splice_rect)`` with
      ``splice_rect = (x, y, 32, 32)``.
    :rtype: tuple

    :raises ConfigurationError: If a quality is out of range or the canvas
      cannot hold the splice.
    """
    q_carrier = JpegQuality.coerce(q_carrier)
    q_splice = JpegQuality.coerce(q_splice)
    if width < 2 * SPLICE_SIDE or height < 2 * SPLICE_SIDE:
        raise ConfigurationError(
            "Carrier %dx%d too small for a splice." % (width, height)
        )

    carrier = Image.from_array(_carrier_scene(carrier_seed, width, height))
    genuine_jpeg = encode_jpeg(carrier, q_carrier)

    rng = derive_rng(splice_seed, 0x5B)
    texture = rng.integers(
        0, 256, size=(SPLICE_SIDE * 2, SPLICE_SIDE * 2, 3), dtype=np.uint8
    )
    source = decode_jpeg(encode_jpeg(Image.from_array(texture), q_splice))

    x = 8 * int(rng.integers(1, (width - SPLICE_SIDE) // 8))
    y = 8 * int(rng.integers(1, (height - SPLICE_SIDE) // 8))
    sx = 8 * int(rng.integers(0, SPLICE_SIDE // 8 + 1))
    sy = 8 * int(rng.integers(0, SPLICE_SIDE // 8 + 1))

    pixels = np.array(decode_jpeg(genuine_jpeg).pixels, copy=True)
    pixels[y : y + SPLICE_SIDE, x : x + SPLICE_SIDE] = source.pixels[
        sy : sy + SPLICE_SIDE, sx : sx + SPLICE_SIDE
    ]
    forged_jpeg = encode_jpeg(Image.from_array(pixels), q_carrier)
    return genuine_jpeg, forged_jpeg, (x, y, SPLICE_SIDE, SPLICE_SIDE)


def identity_name(index: int) -> str:
    return "%04d" % index


def write_synthetic_dataset(
    out_dir: PathLike,
    count: int = 20,
    seed: int = 0,
    canvas: int = DEFAULT_CANVAS,
    quality=95,
) -> List[str]:
    """Write ``<identity>_PRE.jpg`` and ``<identity>_POST.jpg`` per identity.

    :return: Written paths, PRE before POST, identities in order.
    :rtype: List[str]
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for index in range(count):
        spec = SynthIdentitySpec.from_seed(seed * 1000 + index)
        for phase, img in zip(Phase, gen_identity_pair(spec, canvas)):
            name = "%s_%s.jpg" % (identity_name(index), phase.value)
            path = os.path.join(str(out_dir), name)
            save_image(img, path, quality)
            paths.append(path)
    logger.info("Wrote %d synthetic identities to %s", count, out_dir)
    return paths


def write_forgery_corpus(
    out_dir: PathLike, count: int = 10, seed: int = 0
) -> List[Tuple[str, str, Rect]]:
    """Write ``genuine_<i>.jpg`` / ``forged_<i>.jpg`` pairs and
    ``splices.csv`` with the ground-truth rectangles.

    Carrier qualities cycle through 70, 75 and 80; splices are saved at 95.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    rows = []
    for index in range(count):
        q_carrier = (70, 75, 80)[index % 3]
        genuine, forged, rect = gen_forgery_fixture(
            seed * 1000 + index, seed * 1000 + index + 500, q_carrier, 95
        )
        genuine_path = os.path.join(str(out_dir), "genuine_%02d.jpg" % index)
        forged_path = os.path.join(str(out_dir), "forged_%02d.jpg" % index)
        for path, data in ((genuine_path, genuine), (forged_path, forged)):
            with open(path, "wb") as fh:
                fh.write(data)
        entries.append((genuine_path, forged_path, rect))
        rows.append((os.path.basename(forged_path),) + rect + (q_carrier, 95))

    with open(os.path.join(str(out_dir), "splices.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("name", "x", "y", "w", "h", "q_carrier", "q_splice"))
        writer.writerows(rows)
    return entries


def check_separability(
    images: Sequence[Image], cfg: AugmentConfig = AugmentConfig(), copies: int = 2
) -> Tuple[float, float]:
    """Mean pixel distance between a photograph and its augmentations
    versus between photographs of different identities.

    :return: ``(intra, inter)``; usable data has ``intra < inter``.
    """
    arrays = [img.pixels.astype(np.float64) for img in images]
    intra = []
    for index, img in enumerate(images):
        for k in range(copies):
            copy = augment(img, cfg, index, k).pixels.astype(np.float64)
            intra.append(np.mean(np.abs(copy - arrays[index])))

    inter = [
        np.mean(np.abs(arrays[i] - arrays[j]))
        for i in range(len(arrays))
        for j in range(i + 1, len(arrays))
    ]
    return float(np.mean(intra)), float(np.mean(inter))
