import os
import struct
from datetime import datetime, timedelta

import numpy as np
import pytest
from dateutil import tz

from ocverify.database import EmbeddingDatabase, EmbeddingRecord, record_to_dict
from ocverify.exceptions import (
    CorruptDatabaseError,
    DimensionMismatchError,
    StorageError,
)
from ocverify.structures import ModelTag
from tests import settings

RECORDS = 1000
DIMS = {ModelTag.PRE_PRE: 64, ModelTag.POST_POST: 64, ModelTag.PRE_POST: 32}


@pytest.fixture
def filled(rng):
    db = EmbeddingDatabase()
    db.put_vector(ModelTag.PRE_PRE, rng.normal(size=4), "0001_PRE.jpg")
    db.put_vector(ModelTag.POST_POST, rng.normal(size=6), "0001_POST.jpg")
    db.put_vector(ModelTag.PRE_PRE, rng.normal(size=4), "0002_PRE.jpg")
    return db


@pytest.fixture(scope="module")
def many():
    rng = np.random.default_rng(settings.SEED)
    start = datetime(2024, 1, 1, tzinfo=tz.UTC)
    tags = list(ModelTag)

    db = EmbeddingDatabase()
    for index in range(RECORDS):
        tag = tags[int(rng.integers(len(tags)))]
        db.put_vector(
            tag,
            rng.normal(size=DIMS[tag]).astype(np.float32),
            "%04d_%s.jpg" % (index, tag.value),
            start + timedelta(microseconds=int(rng.integers(0, 10 ** 12))),
        )
    return db


# noinspection PyShadowingNames
def test_put_scan(filled):
    assert len(filled) == 3
    assert [r.record_id for r in filled.scan(ModelTag.PRE_PRE)] == [0, 2]
    assert [r.identity_hint for r in filled.scan("post-post")] == ["0001_POST.jpg"]
    assert filled.scan(ModelTag.PRE_POST) == []
    assert filled.dims == {ModelTag.PRE_PRE: 4, ModelTag.POST_POST: 6}
    assert filled.next_id() == 3


def test_record_vector(rng):
    record = EmbeddingRecord(
        0, "x", "PRE-POST", rng.normal(size=(1, 3)), datetime.now(tz.UTC)
    )
    assert record.vector.dtype == np.float32
    assert record.vector.shape == (3,)
    assert record.model_tag is ModelTag.PRE_POST
    with pytest.raises(ValueError):
        record.vector[0] = 1.0


# noinspection PyShadowingNames
def test_dimension_mismatch(filled):
    with pytest.raises(DimensionMismatchError) as excinfo:
        filled.put_vector(ModelTag.PRE_PRE, np.zeros(5))
    assert excinfo.value.message == "Tag PRE-PRE stores 4-dimensional vectors, got 5."
    assert len(filled) == 3


# noinspection PyShadowingNames
def test_record_ids_never_reused(filled):
    with pytest.raises(StorageError):
        filled.put(
            EmbeddingRecord(
                1, "again", ModelTag.PRE_PRE, np.zeros(4), datetime.now(tz.UTC)
            )
        )


# noinspection PyShadowingNames
def test_dumps_loads(filled):
    loaded = EmbeddingDatabase.loads(filled.dumps())
    assert list(loaded) == list(filled)
    assert loaded.dims == filled.dims
    assert loaded.next_id() == 3


def test_file_backed(db_path, rng):
    db = EmbeddingDatabase.open(db_path)
    assert len(db) == 0

    first = db.put_vector(ModelTag.PRE_POST, rng.normal(size=5), "a")
    db.put_vector(ModelTag.PRE_POST, rng.normal(size=5), "b")

    reopened = EmbeddingDatabase.open(db_path)
    assert list(reopened) == list(db)
    assert reopened.scan(ModelTag.PRE_POST)[0] == first

    record = reopened.put_vector(ModelTag.PRE_PRE, rng.normal(size=3), "c")
    assert record.record_id == 2
    assert len(EmbeddingDatabase.load(db_path)) == 3


def test_file_dimension_mismatch(db_path):
    db = EmbeddingDatabase.open(db_path)
    db.put_vector(ModelTag.PRE_PRE, np.zeros(4))
    stale = EmbeddingDatabase(db_path)
    with pytest.raises(DimensionMismatchError):
        stale.put_vector(ModelTag.PRE_PRE, np.zeros(3))
    assert len(EmbeddingDatabase.load(db_path)) == 1


def test_naive_timestamp_stored_as_utc(db_path):
    db = EmbeddingDatabase.open(db_path)
    naive = datetime(2020, 1, 2, 3, 4, 5, 6)
    db.put_vector(ModelTag.PRE_PRE, np.zeros(2), created_at=naive)
    record = EmbeddingDatabase.load(db_path).scan(ModelTag.PRE_PRE)[0]
    assert record.created_at == datetime(2020, 1, 2, 3, 4, 5, 6, tzinfo=tz.UTC)


# noinspection PyShadowingNames
def test_record_to_dict(filled):
    record = filled.scan(ModelTag.POST_POST)[0]
    data = record_to_dict(record)
    assert data["record_id"] == 1
    assert data["model_tag"] == "POST-POST"
    assert data["dimension"] == 6
    assert data["created_at"].endswith("+00:00")


# noinspection PyShadowingNames
def test_unicode_hint(filled):
    filled.put_vector(ModelTag.PRE_PRE, np.zeros(4), "Patiënt 7")
    loaded = EmbeddingDatabase.loads(filled.dumps())
    assert loaded.scan(ModelTag.PRE_PRE)[-1].identity_hint == "Patiënt 7"


# noinspection PyShadowingNames
def test_bad_magic(filled):
    with pytest.raises(CorruptDatabaseError):
        EmbeddingDatabase.loads(b"XXXX" + filled.dumps()[4:])


# noinspection PyShadowingNames
def test_bad_version(filled):
    data = filled.dumps()
    with pytest.raises(CorruptDatabaseError):
        EmbeddingDatabase.loads(data[:4] + struct.pack("<H", 9) + data[6:])


# noinspection PyShadowingNames
@pytest.mark.parametrize("cut", [10, -1, -30], ids=["header", "vector", "record"])
def test_truncated(filled, cut):
    with pytest.raises(CorruptDatabaseError):
        EmbeddingDatabase.loads(filled.dumps()[:cut])


# noinspection PyShadowingNames
def test_unknown_tag_code(filled):
    data = bytearray(filled.dumps())
    # tag byte of the first record, right after its u64 id
    data[18 + 8] = 77
    with pytest.raises(CorruptDatabaseError):
        EmbeddingDatabase.loads(bytes(data))


def test_record_without_header_dimension(rng):
    db = EmbeddingDatabase()
    db.put_vector(ModelTag.PRE_PRE, rng.normal(size=4))
    data = bytearray(db.dumps())
    data[6:10] = struct.pack("<I", 0)
    with pytest.raises(CorruptDatabaseError):
        EmbeddingDatabase.loads(bytes(data))


def test_load_missing(tmp_path):
    with pytest.raises(StorageError):
        EmbeddingDatabase.load(str(tmp_path / "nope.ocdb"))


def test_save_needs_path():
    with pytest.raises(StorageError):
        EmbeddingDatabase().save()


def test_open_without_create(db_path, rng):
    db = EmbeddingDatabase.open(db_path, create=False)
    assert len(db) == 0
    assert not os.path.exists(db_path)

    db.put_vector(ModelTag.PRE_PRE, rng.normal(size=3), "a")
    assert [r.identity_hint for r in EmbeddingDatabase.load(db_path)] == ["a"]


def _round_trip(db, via, path):
    if via == "bytes":
        return EmbeddingDatabase.loads(db.dumps())
    if via == "save":
        db.save(path)
        return EmbeddingDatabase.load(path)
    appended = EmbeddingDatabase.open(path, create=False)
    for record in db:
        appended.put(record)
    return EmbeddingDatabase.load(path)


# noinspection PyShadowingNames
@pytest.mark.parametrize("via", ["bytes", "save", "append"])
def test_many_records_round_trip(many, via, tmp_path):
    loaded = _round_trip(many, via, str(tmp_path / "many.ocdb"))

    assert len(loaded) == RECORDS
    for ours, theirs in zip(many, loaded):
        assert ours.record_id == theirs.record_id
        assert ours.model_tag is theirs.model_tag
        assert ours.identity_hint == theirs.identity_hint
        assert ours.created_at == theirs.created_at
        assert ours.vector.tobytes() == theirs.vector.tobytes()
    assert loaded.dims == many.dims
    assert loaded.dumps() == many.dumps()
