from collections import OrderedDict
from typing import Callable

import numpy as np

from ocverify.dataset import DatasetItem
from ocverify.imaging import Image
from ocverify.neuralnet import ArchConfig, init_network
from ocverify.structures import ModelTag, Phase
from ocverify.synthdata import SynthIdentitySpec, gen_identity_pair, identity_name
from tests import settings


def tiny_arch(**kwargs) -> ArchConfig:
    options = dict(
        input_side=settings.TINY_SIDE,
        conv_blocks=settings.TINY_BLOCKS,
        embedding_dim=settings.TINY_DIM,
    )
    options.update(kwargs)
    return ArchConfig(**options)


def tiny_network(seed: int = settings.SEED, tag=ModelTag.PRE_POST, **kwargs):
    return init_network(tiny_arch(**kwargs), seed, tag).astype(np.float64)


def numeric_gradient(func: Callable[[], float], array: np.ndarray, eps: float = 1e-5):
    """Central differences of ``func()`` w.r.t. every entry of ``array``,
    perturbed in place.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        index = it.multi_index
        original = array[index]
        array[index] = original + eps
        plus = func()
        array[index] = original - eps
        minus = func()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def brute_force_duplicates(stored, vector, theta: float):
    """Record ids within ``theta`` of ``vector``, by plain iteration."""
    found = []
    for record in stored:
        distance = sum(
            (float(x) - float(y)) ** 2 for x, y in zip(record.vector, vector)
        )
        if distance <= theta:
            found.append(record.record_id)
    return found


def gradient_image(width: int = 32, height: int = 24, channels: int = 1) -> Image:
    rows, cols = np.mgrid[0:height, 0:width]
    gray = 40 + (cols * 150) // max(width - 1, 1) + (rows * 40) // max(height - 1, 1)
    if channels == 1:
        return Image.from_array(gray.astype(np.uint8))
    rgb = np.stack([gray, 255 - gray, (gray + 60) % 256], axis=2)
    return Image.from_array(rgb.astype(np.uint8))


def disk_image(
    side: int = 48, radius: int = 12, inside: int = 200, outside: int = 0
) -> Image:
    rows, cols = np.mgrid[0:side, 0:side]
    center = (side - 1) / 2.0
    disk = (rows - center) ** 2 + (cols - center) ** 2 <= radius ** 2
    return Image.from_array(np.where(disk, inside, outside).astype(np.uint8))


def synthetic_items(count: int = 4, seed: int = 0, canvas: int = settings.FACE_CANVAS):
    """PRE and POST items for ``count`` synthetic identities, in memory."""
    items = []
    for index in range(count):
        spec = SynthIdentitySpec.from_seed(seed * 1000 + index)
        identity = identity_name(index)
        for phase, image in zip(Phase, gen_identity_pair(spec, canvas)):
            items.append(
                DatasetItem(
                    item_id="%s_%s" % (identity, phase.value),
                    identity_id=identity,
                    phase=phase,
                    image=image,
                )
            )
    return items


def params_snapshot(net) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((name, value.copy()) for name, value in net.params.items())
