"""The convolutional embedding network.

Topology: ``n`` blocks of valid convolution, bias, ReLU and max pooling,
then one fully connected layer and optional L2 normalisation. With the
default architecture a 96x96 input shrinks as::

    96 -conv3-> 94 -pool2-> 47 -conv3-> 45 -pool2-> 22
       -conv3-> 20 -pool2-> 10 -conv3->  8 -pool2->  4

so the fully connected layer sees ``128 * 4 * 4`` features.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ocverify import messages
from ocverify.exceptions import (
    ConfigurationError,
    ShapeError,
    StaleCacheError,
    TrainingError,
)
from ocverify.helpers import derive_rng
from ocverify.imaging import Image, resize, to_grayscale
from ocverify.neuralnet import layers
from ocverify.structures import ModelTag
from ocverify.typed import Grads, Params

__all__ = [
    "ArchConfig",
    "ForwardCache",
    "Network",
    "backward",
    "embed",
    "forward",
    "image_to_tensor",
    "init_network",
    "parse_conv_blocks",
]

logger = logging.getLogger(__name__)

ConvBlock = Tuple[int, int, int]

DEFAULT_CONV_BLOCKS: Tuple[ConvBlock, ...] = (
    (16, 3, 2),
    (32, 3, 2),
    (64, 3, 2),
    (128, 3, 2),
)


def parse_conv_blocks(text: str) -> Tuple[ConvBlock, ...]:
    """Parse ``"16x3x2,32x3x2"`` into ``((16, 3, 2), (32, 3, 2))``.

    :raises ConfigurationError: On malformed text.
    """
    blocks = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            out_channels, kernel, pool = (int(part) for part in chunk.split("x"))
        except ValueError:
            raise ConfigurationError("Malformed conv block '%s'." % chunk)
        blocks.append((out_channels, kernel, pool))
    return tuple(blocks)


def format_conv_blocks(blocks: Iterable[ConvBlock]) -> str:
    return ",".join("%dx%dx%d" % tuple(block) for block in blocks)


@dataclass(frozen=True)
class ArchConfig:
    """Network shape.

    :param input_side: Square input side in pixels.
    :param input_channels: 1 (grayscale) or 3.
    :param conv_blocks: ``(out_channels, kernel_size, pool_size)`` per block.
    :param embedding_dim: Output dimension ``d``.
    :param normalize_embeddings: Project outputs onto the unit sphere.

    :raises ConfigurationError: If any block pools below 1x1 or ``d < 2``.
    """

    input_side: int = 96
    input_channels: int = 1
    conv_blocks: Tuple[ConvBlock, ...] = DEFAULT_CONV_BLOCKS
    embedding_dim: int = 64
    normalize_embeddings: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "conv_blocks",
            tuple(tuple(int(v) for v in b) for b in self.conv_blocks),
        )
        if self.input_channels not in (1, 3):
            raise ConfigurationError(
                "Input channels must be 1 or 3, got %r." % self.input_channels
            )
        if self.embedding_dim < 2:
            raise ConfigurationError(
                "Embedding dimension must be >= 2, got %r." % self.embedding_dim
            )
        if not self.conv_blocks:
            raise ConfigurationError("At least one conv block is required.")
        for out_channels, kernel, pool in self.conv_blocks:
            if out_channels < 1 or kernel < 1 or pool < 1:
                raise ConfigurationError(
                    "Conv block values must be positive: %r."
                    % ((out_channels, kernel, pool),)
                )
        self.spatial_sizes()

    def spatial_sizes(self) -> List[int]:
        """Map side after every block, input first."""
        sizes = [self.input_side]
        side = self.input_side
        for index, (_, kernel, pool) in enumerate(self.conv_blocks):
            conv_side = side - kernel + 1
            if conv_side < 1 or conv_side // pool < 1:
                raise ConfigurationError(
                    messages.ARCH_POOL_UNDERFLOW % (index, side, side)
                )
            side = conv_side // pool
            sizes.append(side)
        return sizes

    @property
    def flat_features(self) -> int:
        return self.conv_blocks[-1][0] * self.spatial_sizes()[-1] ** 2

    def parameter_shapes(self) -> "OrderedDict[str, Tuple[int, ...]]":
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        channels = self.input_channels
        for index, (out_channels, kernel, _) in enumerate(self.conv_blocks):
            shapes["conv%d.weight" % index] = (out_channels, channels, kernel, kernel)
            shapes["conv%d.bias" % index] = (out_channels,)
            channels = out_channels
        shapes["fc.weight"] = (self.embedding_dim, self.flat_features)
        shapes["fc.bias"] = (self.embedding_dim,)
        return shapes


@dataclass
class ForwardCache:
    """Activations kept by :meth:`Network.forward` for the backward pass."""

    owner: int
    version: int
    blocks: List[Tuple[np.ndarray, np.ndarray, np.ndarray, Tuple[int, ...]]] = field(
        default_factory=list
    )
    flat: Optional[np.ndarray] = None
    pooled_shape: Tuple[int, ...] = ()
    output: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None


def _check_finite(array: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(array)):
        raise TrainingError(messages.NON_FINITE_ACTIVATION % layer)


class Network:
    """Embedding network: architecture, named parameters and a model tag.

    .. code-block:: python

        net = init_network(ArchConfig(), seed=7, tag=ModelTag.PRE_POST)
        out, cache = net.forward(batch)
        grads = net.backward(cache, upstream)

    The tag is fixed at construction. Parameters only change through
    :meth:`set_params`, which invalidates outstanding forward caches.
    """

    def __init__(self, arch: ArchConfig, params: Params, tag: ModelTag) -> None:
        expected = arch.parameter_shapes()
        if list(params) != list(expected):
            raise ConfigurationError(
                "Parameter names %s do not match architecture %s."
                % (list(params), list(expected))
            )
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(
                    "expected %s, got %s" % (shape, tuple(params[name].shape)), name
                )

        self._arch = arch
        self._params: Params = OrderedDict(
            (k, np.asarray(v)) for k, v in params.items()
        )
        self._tag = ModelTag.parse(tag)
        self._version = 0

    @property
    def arch(self) -> ArchConfig:
        return self._arch

    @property
    def tag(self) -> ModelTag:
        return self._tag

    @property
    def params(self) -> Params:
        """Parameter arrays in layer order. Treat as read-only."""
        return self._params

    @property
    def dtype(self) -> np.dtype:
        return self._params["fc.weight"].dtype

    @property
    def version(self) -> int:
        return self._version

    def set_params(self, params: Params) -> None:
        for name, value in params.items():
            if name not in self._params:
                raise ConfigurationError("Unknown parameter '%s'." % name)
            if value.shape != self._params[name].shape:
                raise ShapeError(
                    "expected %s, got %s" % (self._params[name].shape, value.shape),
                    name,
                )
            self._params[name] = value
        self._version += 1

    def astype(self, dtype) -> "Network":
        """Copy with every parameter cast to ``dtype``."""
        return Network(
            self._arch,
            OrderedDict((k, v.astype(dtype)) for k, v in self._params.items()),
            self._tag,
        )

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    def forward(self, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """Embed a ``(B, C, H, W)`` batch of inputs scaled to ``[0, 1]``.

        :return: ``(embeddings, cache)`` with embeddings of shape ``(B, d)``.

        :raises ShapeError: If the batch does not match the architecture.
        :raises TrainingError: If an activation is not finite.
        """
        arch = self._arch
        batch = np.asarray(batch)
        expected = (arch.input_channels, arch.input_side, arch.input_side)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
            raise ShapeError(
                "expected (B, %d, %d, %d), got %s" % (expected + (batch.shape,)),
                "input",
            )

        cache = ForwardCache(owner=id(self), version=self._version)
        x = batch.astype(self.dtype, copy=False)

        for index, (_, _, pool) in enumerate(arch.conv_blocks):
            name = "conv%d" % index
            z = layers.conv2d_forward(
                x, self._params[name + ".weight"], self._params[name + ".bias"]
            )
            pooled, argmax = layers.maxpool_forward(layers.relu_forward(z), pool)
            _check_finite(pooled, name)
            cache.blocks.append((x, z, argmax, z.shape))
            x = pooled

        cache.pooled_shape = x.shape
        flat = x.reshape(x.shape[0], -1)
        cache.flat = flat
        out = layers.dense_forward(
            flat, self._params["fc.weight"], self._params["fc.bias"]
        )
        _check_finite(out, "fc")

        if arch.normalize_embeddings:
            out, norms = layers.l2_normalize_forward(out)
            cache.norms = norms
        cache.output = out
        return out, cache

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> Grads:
        """Gradients of ``sum(upstream * embeddings)`` w.r.t. every parameter.

        :raises StaleCacheError: If ``cache`` did not come from the latest
          :meth:`forward` of this network.
        :raises ShapeError: If ``upstream`` does not match the cached output.
        :raises TrainingError: If a gradient is not finite.
        """
        if cache is None or cache.output is None:
            raise StaleCacheError("Backward called without a forward cache.")
        if cache.owner != id(self) or cache.version != self._version:
            raise StaleCacheError(
                "Forward cache is stale (version %d, network at %d)."
                % (cache.version, self._version)
            )

        upstream = np.asarray(upstream, dtype=self.dtype)
        if upstream.shape != cache.output.shape:
            raise ShapeError(
                "expected %s, got %s" % (cache.output.shape, upstream.shape), "output"
            )

        grads: Grads = OrderedDict()
        dout = upstream
        if self._arch.normalize_embeddings:
            dout = layers.l2_normalize_backward(dout, cache.output, cache.norms)

        dflat, grads["fc.weight"], grads["fc.bias"] = layers.dense_backward(
            dout, cache.flat, self._params["fc.weight"]
        )
        dx = dflat.reshape(cache.pooled_shape)

        for index in reversed(range(len(self._arch.conv_blocks))):
            name = "conv%d" % index
            pool = self._arch.conv_blocks[index][2]
            x_in, z, argmax, z_shape = cache.blocks[index]
            da = layers.maxpool_backward(dx, argmax, z_shape, pool)
            dz = layers.relu_backward(da, z)
            dx, dweight, dbias = layers.conv2d_backward(
                dz, x_in, self._params[name + ".weight"]
            )
            grads[name + ".weight"] = dweight
            grads[name + ".bias"] = dbias

        ordered: Grads = OrderedDict((name, grads[name]) for name in self._params)
        for name, grad in ordered.items():
            if not np.all(np.isfinite(grad)):
                raise TrainingError(messages.NON_FINITE_GRADIENT % name)
        return ordered

    def embed(self, img: Image) -> np.ndarray:
        """Embedding of one image of any size, shape ``(d,)``."""
        out, _ = self.forward(image_to_tensor(img, self._arch)[np.newaxis])
        return out[0]

    def embed_tensors(self, tensors: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Embed a stack of prepared ``(N, C, H, W)`` inputs in mini-batches."""
        rows = [
            self.forward(tensors[start : start + batch_size])[0]
            for start in range(0, len(tensors), batch_size)
        ]
        if not rows:
            return np.zeros((0, self._arch.embedding_dim), dtype=self.dtype)
        return np.concatenate(rows, axis=0)

    def embed_batch(self, images: Sequence[Image], batch_size: int = 32) -> np.ndarray:
        """Embeddings of many images, shape ``(N, d)``."""
        return self.embed_tensors(stack_images(images, self._arch), batch_size)

    def __repr__(self) -> str:
        return "<Network %s d=%d blocks=%s>" % (
            self._tag.value,
            self._arch.embedding_dim,
            format_conv_blocks(self._arch.conv_blocks),
        )


def image_to_tensor(img: Image, arch: ArchConfig) -> np.ndarray:
    """Convert an 8-bit image into a ``(C, side, side)`` float32 input in
    ``[0, 1]``: grayscale (for 1-channel networks), resize, scale.
    """
    side = arch.input_side
    if arch.input_channels == 1:
        img = to_grayscale(img)
    img = resize(img, side, side)

    pixels = img.pixels.astype(np.float32) / np.float32(255.0)
    if arch.input_channels == 3 and img.channels == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def stack_images(images: Sequence[Image], arch: ArchConfig) -> np.ndarray:
    if not images:
        return np.zeros(
            (0, arch.input_channels, arch.input_side, arch.input_side), dtype=np.float32
        )
    return np.stack([image_to_tensor(img, arch) for img in images])


def init_network(
    arch: ArchConfig, seed: int, tag: ModelTag = ModelTag.PRE_POST
) -> Network:
    """He-initialised network: weights ``N(0, 2 / fan_in)``, biases 0.

    :param arch: Architecture.
    :type arch: :class:`.ArchConfig`

    :param seed: Random seed; equal seeds give bit-identical parameters.
    :type seed: int

    :param tag: Model tag.
    :type tag: :class:`.ModelTag`

    :return: Float32 network.
    :rtype: :class:`.Network`
    """
    rng = derive_rng(seed)
    params: Params = OrderedDict()
    for name, shape in arch.parameter_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            params[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return Network(arch, params, tag)


def forward(net: Network, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    return net.forward(batch)


def backward(net: Network, cache: ForwardCache, upstream: np.ndarray) -> Grads:
    return net.backward(cache, upstream)


def embed(net: Network, img: Image) -> np.ndarray:
    return net.embed(img)
