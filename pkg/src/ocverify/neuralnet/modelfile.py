"""OCV1 model files.

Layout, little-endian throughout::

    b"OCV1"
    u8 tag length, ASCII model tag ("PRE-POST")
    u32 input_side, u32 input_channels, u32 embedding_dim, u8 normalize
    u32 block count, then u32 out_channels, u32 kernel, u32 pool per block
    u32 parameter count, then per parameter:
        u16 name length, ASCII name, u8 rank, u32 extent * rank,
        float32 data in row-major order
"""
import io
import logging
import struct
from collections import OrderedDict
from typing import BinaryIO

import numpy as np

from ocverify import messages
from ocverify.exceptions import ConfigurationError, ModelFileError, ShapeError
from ocverify.helpers import atomic_write
from ocverify.neuralnet.network import ArchConfig, Network
from ocverify.structures import ModelTag
from ocverify.typed import PathLike

__all__ = ["dumps_network", "loads_network", "save_network", "load_network"]

logger = logging.getLogger(__name__)

MAGIC = b"OCV1"
MODEL_SUFFIX = ".ocv"

_FLOAT = np.dtype("<f4")


def _read(stream: BinaryIO, fmt: str):
    size = struct.calcsize(fmt)
    chunk = stream.read(size)
    if len(chunk) != size:
        raise ModelFileError("Model file truncated at byte %d." % stream.tell())
    return struct.unpack(fmt, chunk)


def dumps_network(net: Network) -> bytes:
    """Serialise ``net``. Float64 parameters are stored as float32."""
    arch = net.arch
    out = io.BytesIO()
    out.write(MAGIC)

    tag = net.tag.value.encode("ascii")
    out.write(struct.pack("<B", len(tag)))
    out.write(tag)

    out.write(
        struct.pack(
            "<IIIB",
            arch.input_side,
            arch.input_channels,
            arch.embedding_dim,
            1 if arch.normalize_embeddings else 0,
        )
    )
    out.write(struct.pack("<I", len(arch.conv_blocks)))
    for block in arch.conv_blocks:
        out.write(struct.pack("<III", *block))

    out.write(struct.pack("<I", len(net.params)))
    for name, value in net.params.items():
        encoded = name.encode("ascii")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<B", value.ndim))
        out.write(struct.pack("<%dI" % value.ndim, *value.shape))
        out.write(np.ascontiguousarray(value, dtype=_FLOAT).tobytes())

    return out.getvalue()


def loads_network(data: bytes) -> Network:
    """Parse a model file.

    :raises ModelFileError: On bad magic, truncation, trailing bytes or
      parameters that do not fit the stored architecture.
    """
    stream = io.BytesIO(data)
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise ModelFileError(messages.MODEL_BAD_MAGIC % magic)

    (tag_len,) = _read(stream, "<B")
    tag_bytes = stream.read(tag_len)
    try:
        tag = ModelTag.parse(tag_bytes.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise ModelFileError("Unknown model tag %r." % tag_bytes)

    input_side, input_channels, embedding_dim, normalize = _read(stream, "<IIIB")
    (n_blocks,) = _read(stream, "<I")
    blocks = tuple(_read(stream, "<III") for _ in range(n_blocks))

    try:
        arch = ArchConfig(
            input_side=input_side,
            input_channels=input_channels,
            conv_blocks=blocks,
            embedding_dim=embedding_dim,
            normalize_embeddings=bool(normalize),
        )
    except ConfigurationError as err:
        raise ModelFileError("Invalid architecture in model file: %s" % err.message)

    params = OrderedDict()
    (n_params,) = _read(stream, "<I")
    for _ in range(n_params):
        (name_len,) = _read(stream, "<H")
        name = stream.read(name_len).decode("ascii", errors="replace")
        (rank,) = _read(stream, "<B")
        shape = _read(stream, "<%dI" % rank)
        count = int(np.prod(shape)) if rank else 1
        raw = stream.read(count * _FLOAT.itemsize)
        if len(raw) != count * _FLOAT.itemsize:
            raise ModelFileError("Model file truncated in parameter '%s'." % name)
        values = np.frombuffer(raw, dtype=_FLOAT).astype(np.float32)
        params[name] = values.reshape(shape)

    if stream.read(1):
        raise ModelFileError("Trailing bytes after the last parameter.")

    try:
        return Network(arch, params, tag)
    except (ConfigurationError, ShapeError) as err:
        raise ModelFileError("Parameters do not fit architecture: %s" % err.message)


def save_network(net: Network, path: PathLike) -> None:
    """Write ``net`` to ``path`` through a temporary file and rename."""
    atomic_write(path, dumps_network(net))
    logger.debug("Saved %r to %s", net, path)


def load_network(path: PathLike) -> Network:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as err:
        raise ModelFileError("Cannot read model file '%s': %s" % (path, err))
    return loads_network(data)
