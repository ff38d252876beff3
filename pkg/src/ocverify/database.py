"""Append-only embedding database (OCDB files).

Layout, little-endian::

    header:  b"OCDB", u16 version,
             u32 dimension for PRE-PRE, POST-POST, PRE-POST (0 = none yet)
    records: u64 record_id, u8 tag code, u16 label length, UTF-8 label,
             i64 created_at (microseconds since the Unix epoch, UTC),
             float32 * d vector

A record's ``d`` comes from the header entry of its tag, so a tag's
dimension is fixed by its first record.
"""
import io
import logging
import os
import struct
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import BinaryIO, Dict, Iterator, List, Optional

import numpy as np
from dateutil import tz

from ocverify import messages
from ocverify.exceptions import (
    CorruptDatabaseError,
    DimensionMismatchError,
    StorageError,
)
from ocverify.helpers import atomic_write, lock_local_file
from ocverify.structures import ModelTag
from ocverify.typed import PathLike

__all__ = ["EmbeddingDatabase", "EmbeddingRecord", "record_to_dict"]

logger = logging.getLogger(__name__)

MAGIC = b"OCDB"
VERSION = 1

_TAG_ORDER = (ModelTag.PRE_PRE, ModelTag.POST_POST, ModelTag.PRE_POST)
_HEADER = struct.Struct("<4sH3I")
_RECORD_HEAD = struct.Struct("<QBH")
_TIMESTAMP = struct.Struct("<q")
_FLOAT = np.dtype("<f4")
_EPOCH = datetime(1970, 1, 1, tzinfo=tz.UTC)


def utcnow() -> datetime:
    """Current time, UTC, truncated to whole microseconds."""
    return datetime.now(tz.UTC)


def _to_micros(moment: datetime) -> int:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=tz.UTC)
    delta = moment - _EPOCH
    return (delta.days * 86400 + delta.seconds) * 1000000 + delta.microseconds


def _from_micros(micros: int) -> datetime:
    return _EPOCH + timedelta(microseconds=micros)


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One stored embedding.

    :param record_id: Unique, never reused.
    :param identity_hint: Free-form label (file name, case number).
    :param model_tag: Model that produced ``vector``.
    :param vector: Float32 vector of the model's dimension.
    :param created_at: Timezone-aware UTC timestamp.
    """

    record_id: int
    identity_hint: str
    model_tag: ModelTag
    vector: np.ndarray
    created_at: datetime

    def __post_init__(self) -> None:
        vector = np.array(self.vector, dtype=np.float32).reshape(-1)
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "model_tag", ModelTag.parse(self.model_tag))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, EmbeddingRecord):
            return (
                self.record_id == other.record_id
                and self.identity_hint == other.identity_hint
                and self.model_tag is other.model_tag
                and self.created_at == other.created_at
                and self.vector.tobytes() == other.vector.tobytes()
            )
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.record_id, self.model_tag))

    def __repr__(self) -> str:
        return "<EmbeddingRecord %d %s %r>" % (
            self.record_id,
            self.model_tag.value,
            self.identity_hint,
        )


def record_to_dict(record: EmbeddingRecord) -> dict:
    return {
        "record_id": record.record_id,
        "identity_hint": record.identity_hint,
        "model_tag": record.model_tag.value,
        "created_at": record.created_at.astimezone(tz.UTC).isoformat(),
        "dimension": int(record.vector.size),
    }


def _encode_record(record: EmbeddingRecord) -> bytes:
    label = record.identity_hint.encode("utf-8")
    if len(label) > 0xFFFF:
        raise StorageError("Identity hint longer than 65535 bytes.")
    return b"".join(
        (
            _RECORD_HEAD.pack(record.record_id, record.model_tag.code, len(label)),
            label,
            _TIMESTAMP.pack(_to_micros(record.created_at)),
            record.vector.astype(_FLOAT).tobytes(),
        )
    )


class EmbeddingDatabase:
    """Embedding records, optionally backed by an OCDB file.

    In-memory use:

    .. code-block:: python

        db = EmbeddingDatabase()
        record = db.put_vector(ModelTag.PRE_PRE, vector, '0001_PRE.jpg')
        db.scan(ModelTag.PRE_PRE)
        # [<EmbeddingRecord 0 PRE-PRE '0001_PRE.jpg'>]

    File-backed use appends every :meth:`put` to the file under a lock:

    .. code-block:: python

        db = EmbeddingDatabase.open('embeddings.ocdb')

    :param path: (optional) Backing file.
    :type path: str or Path or None
    """

    def __init__(self, path: Optional[PathLike] = None) -> None:
        self.path = str(path) if path is not None else None
        self._records: List[EmbeddingRecord] = []
        self._dims: Dict[ModelTag, int] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(list(self._records))

    def __repr__(self) -> str:
        return "<EmbeddingDatabase %s records=%d>" % (
            self.path or ":memory:",
            len(self),
        )

    @property
    def dims(self) -> Dict[ModelTag, int]:
        """Vector dimension per tag written so far."""
        return dict(self._dims)

    def next_id(self) -> int:
        return self._next_id

    def _accept(self, record: EmbeddingRecord) -> None:
        expected = self._dims.get(record.model_tag)
        if expected is not None and expected != record.vector.size:
            raise DimensionMismatchError(
                messages.DB_DIMENSION_MISMATCH
                % (record.model_tag.value, expected, record.vector.size)
            )
        if record.record_id < self._next_id:
            raise StorageError("Record id %d already used." % record.record_id)

    def _remember(self, record: EmbeddingRecord) -> None:
        self._records.append(record)
        self._dims.setdefault(record.model_tag, int(record.vector.size))
        self._next_id = record.record_id + 1

    def put(self, record: EmbeddingRecord) -> EmbeddingRecord:
        """Append a record.

        :raises DimensionMismatchError: If the vector dimension differs
          from earlier records of the same tag.
        :raises StorageError: If the id was already used or the backing
          file cannot be written.
        """
        self._accept(record)
        if self.path is not None:
            self._append_to_file(record)
        self._remember(record)
        logger.debug(
            messages.DB_APPEND,
            record.record_id,
            record.model_tag.value,
            record.identity_hint,
        )
        return record

    def put_vector(
        self,
        tag: ModelTag,
        vector: np.ndarray,
        identity_hint: str = "",
        created_at: Optional[datetime] = None,
    ) -> EmbeddingRecord:
        """Wrap ``vector`` in a record with the next id and store it."""
        return self.put(
            EmbeddingRecord(
                record_id=self._next_id,
                identity_hint=identity_hint,
                model_tag=tag,
                vector=vector,
                created_at=created_at or utcnow(),
            )
        )

    def scan(self, tag) -> List[EmbeddingRecord]:
        """Records of one tag in insertion order."""
        tag = ModelTag.parse(tag)
        return [record for record in self._records if record.model_tag is tag]

    def dumps(self) -> bytes:
        out = io.BytesIO()
        dims = (self._dims.get(tag, 0) for tag in _TAG_ORDER)
        out.write(_HEADER.pack(MAGIC, VERSION, *dims))
        for record in self._records:
            out.write(_encode_record(record))
        return out.getvalue()

    @classmethod
    def loads(cls, data: bytes, path: Optional[PathLike] = None) -> "EmbeddingDatabase":
        """Parse OCDB bytes.

        :raises CorruptDatabaseError: On bad magic, unknown version or tag,
          truncation, or records that disagree with the header.
        """
        db = cls(path)
        db._read(io.BytesIO(data), len(data))
        return db

    def _read(self, stream: BinaryIO, size: int) -> None:
        head = stream.read(_HEADER.size)
        if len(head) < 4 or head[:4] != MAGIC:
            raise CorruptDatabaseError(messages.DB_BAD_MAGIC % head[:4])
        if len(head) != _HEADER.size:
            raise CorruptDatabaseError(messages.DB_TRUNCATED % len(head))

        _, version, *dims = _HEADER.unpack(head)
        if version != VERSION:
            raise CorruptDatabaseError("Unsupported database version %d." % version)
        header_dims = {tag: d for tag, d in zip(_TAG_ORDER, dims) if d}

        while stream.tell() < size:
            start = stream.tell()
            chunk = stream.read(_RECORD_HEAD.size)
            if len(chunk) != _RECORD_HEAD.size:
                raise CorruptDatabaseError(messages.DB_TRUNCATED % start)
            record_id, code, label_len = _RECORD_HEAD.unpack(chunk)

            try:
                tag = ModelTag.from_code(code)
            except ValueError:
                raise CorruptDatabaseError(
                    "Unknown tag code %d in record at byte %d." % (code, start)
                )
            dim = header_dims.get(tag)
            if not dim:
                raise CorruptDatabaseError(
                    "Header has no dimension for tag %s." % tag.value
                )

            label = stream.read(label_len)
            stamp = stream.read(_TIMESTAMP.size)
            raw = stream.read(dim * _FLOAT.itemsize)
            if (
                len(label) != label_len
                or len(stamp) != _TIMESTAMP.size
                or len(raw) != dim * _FLOAT.itemsize
            ):
                raise CorruptDatabaseError(messages.DB_TRUNCATED % start)

            record = EmbeddingRecord(
                record_id=record_id,
                identity_hint=label.decode("utf-8", errors="replace"),
                model_tag=tag,
                vector=np.frombuffer(raw, dtype=_FLOAT),
                created_at=_from_micros(_TIMESTAMP.unpack(stamp)[0]),
            )
            try:
                self._accept(record)
            except StorageError as err:
                raise CorruptDatabaseError(err.message)
            self._remember(record)

    def save(self, path: Optional[PathLike] = None) -> None:
        """Write the whole database through a temporary file and rename."""
        target = path or self.path
        if target is None:
            raise StorageError("No path to save the database to.")
        atomic_write(target, self.dumps())

    @classmethod
    def load(cls, path: PathLike) -> "EmbeddingDatabase":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as err:
            raise StorageError("Cannot read database '%s': %s" % (path, err))
        return cls.loads(data, path)

    @classmethod
    def open(cls, path: PathLike, create: bool = True) -> "EmbeddingDatabase":
        """File-backed database.

        A missing file is written empty right away, or with ``create=False``
        only when the first record is stored.
        """
        if os.path.exists(path):
            return cls.load(path)
        db = cls(path)
        if create:
            db.save()
        return db

    def _append_to_file(self, record: EmbeddingRecord) -> None:
        tag_index = _TAG_ORDER.index(record.model_tag)
        try:
            with lock_local_file(self.path):
                if not os.path.exists(self.path):
                    with open(self.path, "wb") as fh:
                        fh.write(_HEADER.pack(MAGIC, VERSION, 0, 0, 0))
                with open(self.path, "r+b") as fh:
                    head = fh.read(_HEADER.size)
                    if len(head) != _HEADER.size or head[:4] != MAGIC:
                        raise CorruptDatabaseError(messages.DB_BAD_MAGIC % head[:4])
                    dims = list(_HEADER.unpack(head)[2:])
                    if dims[tag_index] == 0:
                        dims[tag_index] = int(record.vector.size)
                        fh.seek(0)
                        fh.write(_HEADER.pack(MAGIC, VERSION, *dims))
                    elif dims[tag_index] != record.vector.size:
                        raise DimensionMismatchError(
                            messages.DB_DIMENSION_MISMATCH
                            % (
                                record.model_tag.value,
                                dims[tag_index],
                                record.vector.size,
                            )
                        )
                    fh.seek(0, os.SEEK_END)
                    fh.write(_encode_record(record))
                    fh.flush()
                    os.fsync(fh.fileno())
        except OSError as err:
            raise StorageError("Cannot append to database '%s': %s" % (self.path, err))
