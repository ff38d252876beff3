"""Helper methods for ocverify."""
import hashlib
import mimetypes
import os
from contextlib import contextmanager
from typing import BinaryIO, Generator, Iterator, Optional

import filelock
import magic  # type: ignore
import numpy as np

from ocverify.exceptions import StorageError
from ocverify.typed import PathLike

JPEG_MIME = "image/jpeg"
PNM_MIMES = (
    "image/x-portable-greymap",
    "image/x-portable-graymap",
    "image/x-portable-pixmap",
    "image/x-portable-anymap",
    "image/x-portable-bitmap",
)


def read_in_chunks(
    file_object: BinaryIO, block_size: int = 4096
) -> Generator[bytes, None, None]:
    """Stream an image file in chunks for :func:`file_checksum`.

    :param file_object: Binary file opened for reading.
    :type file_object: file object

    :param block_size: (optional) Bytes per chunk.
    :type block_size: int

    :yield: The next chunk; the last one may be shorter.
    :yield type: `bytes`
    """
    for chunk in iter(lambda: file_object.read(block_size), b""):
        yield chunk


def file_checksum(filename: PathLike, hash_type: str = "sha1", block_size: int = 4096):
    """Checksum of an image file, read in chunks.

    Manifests record the checksum of every written image so reruns can be
    compared byte for byte.

    .. code-block:: python

        from ocverify.helpers import file_checksum

        file_checksum('faces/0001_PRE.jpg').hexdigest()
        # '6a1b...'

    :param filename: Image path.
    :type filename: str or Path

    :param hash_type: Hash algorithm function name.
    :type hash_type: str

    :param block_size: (optional) Chunk size.
    :type block_size: int

    :return: Hash object; the manifest stores its ``hexdigest()``.

    :raise RuntimeError: If the hash algorithm is not found in :mod:`hashlib`.
    """
    try:
        file_hash = getattr(hashlib, hash_type)()
    except AttributeError:
        raise RuntimeError("Invalid or unsupported hash type: %s" % hash_type)

    with open(filename, "rb") as file_:
        for chunk in read_in_chunks(file_, block_size=block_size):
            file_hash.update(chunk)

    return file_hash


def content_type(data: bytes, filename: Optional[PathLike] = None) -> Optional[str]:
    """Guess the content type of an image byte stream.

    Uses libmagic on the leading bytes and falls back to the file name
    extension when libmagic cannot tell.

    :param data: Raw file content.
    :type data: bytes

    :param filename: (optional) File name for the extension fallback.
    :type filename: str or Path or None

    :return: MIME type.
    :rtype: str or None
    """
    mime = None
    if data:
        mime = magic.from_buffer(data[:2048], mime=True)

    if mime in (None, "application/octet-stream", "text/plain") and filename:
        mime = mimetypes.guess_type(str(filename))[0] or mime

    return mime


@contextmanager
def lock_local_file(path: PathLike) -> Iterator[filelock.FileLock]:
    """Platform dependent file lock.

    :param path: File path to lock.
    :type path: str or Path

    :yield: File lock context manager.
    :yield type: :class:`filelock.FileLock`

    :raise StorageError: If lock could not be acquired.
    """
    lock = filelock.FileLock(str(path) + ".lock")

    try:
        lock.acquire(timeout=5)
    except filelock.Timeout:
        raise StorageError("Lock timeout on '%s'" % path)

    try:
        yield lock
    finally:
        if lock.is_locked:
            lock.release()

        if os.path.exists(lock.lock_file):
            os.remove(lock.lock_file)


def atomic_write(path: PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file and rename.

    :param path: Destination file.
    :type path: str or Path

    :param data: File content.
    :type data: bytes

    :return: NoneType
    :rtype: None
    """
    path = str(path)
    tmp_path = f"{path}.tmp"

    with lock_local_file(path):
        with open(tmp_path, "wb") as out:
            out.write(data)
            out.flush()
            os.fsync(out.fileno())
        os.replace(tmp_path, path)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent, reproducible random stream for ``(seed, *keys)``.

    Workers that each own a key can sample concurrently without sharing
    generator state.

    :param seed: Base seed.
    :type seed: int

    :param keys: Stream coordinates (image index, epoch, step, ...).
    :type keys: int

    :return: Random generator.
    :rtype: :class:`numpy.random.Generator`
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
