import csv
import os

import numpy as np
import pytest

from ocverify.exceptions import ConfigurationError
from ocverify.imaging import decode_jpeg
from ocverify.synthdata import (
    JITTER_LEVELS,
    SPLICE_SIDE,
    SynthIdentitySpec,
    check_separability,
    gen_forgery_fixture,
    gen_identity_pair,
    patch_box,
    write_forgery_corpus,
    write_synthetic_dataset,
)
from tests import settings


def test_spec_reproducible():
    assert SynthIdentitySpec.from_seed(3) == SynthIdentitySpec.from_seed(3)
    assert SynthIdentitySpec.from_seed(3) != SynthIdentitySpec.from_seed(4)


def test_eyes_inside_head():
    specs = [SynthIdentitySpec.from_seed(seed) for seed in range(50)]
    assert all(spec.eyes_inside_head() for spec in specs)


def test_identity_pair(face_spec, face_pair):
    pre, post = face_pair
    assert pre.size == post.size == (settings.FACE_CANVAS, settings.FACE_CANVAS)
    assert pre.channels == post.channels == 3
    for img in face_pair:
        assert 24 <= int(img.pixels.min()) and int(img.pixels.max()) <= 232


def test_post_differs_inside_patch_only(face_spec, face_pair):
    pre, post = face_pair
    diff = post.pixels.astype(int) - pre.pixels.astype(int)

    x, y, w, h = patch_box(face_spec, settings.FACE_CANVAS)
    outside = np.ones(diff.shape[:2], dtype=bool)
    outside[y : y + h, x : x + w] = False

    shift = np.unique(diff[outside])
    assert len(shift) == 1
    assert abs(int(shift[0])) <= JITTER_LEVELS
    assert np.any(diff[~outside] != shift[0])


def test_identity_pair_reproducible(face_spec, face_pair):
    assert gen_identity_pair(face_spec, settings.FACE_CANVAS) == face_pair


def test_canvas_too_small(face_spec):
    with pytest.raises(ConfigurationError):
        gen_identity_pair(face_spec, canvas=32)


def test_forgery_fixture_geometry():
    genuine, forged, rect = gen_forgery_fixture(4, 504, 75, 95)
    x, y, w, h = rect
    assert (w, h) == (SPLICE_SIDE, SPLICE_SIDE)
    assert x % 8 == 0 and y % 8 == 0
    assert x + w <= 256 and y + h <= 192

    genuine_img, forged_img = decode_jpeg(genuine), decode_jpeg(forged)
    assert genuine_img.size == forged_img.size == (256, 192)
    assert genuine_img != forged_img


def test_forgery_fixture_reproducible():
    assert gen_forgery_fixture(1, 2, 80, 95) == gen_forgery_fixture(1, 2, 80, 95)


@pytest.mark.parametrize(
    "kwargs",
    [{"q_carrier": 0}, {"q_splice": 101}, {"width": 48}],
    ids=["carrier quality", "splice quality", "too narrow"],
)
def test_forgery_fixture_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        gen_forgery_fixture(0, 1, **kwargs)


def test_write_synthetic_dataset(tmp_path):
    paths = write_synthetic_dataset(str(tmp_path), count=2, seed=1, canvas=64)
    assert [os.path.basename(p) for p in paths] == [
        "0000_PRE.jpg",
        "0000_POST.jpg",
        "0001_PRE.jpg",
        "0001_POST.jpg",
    ]
    assert all(os.path.isfile(p) for p in paths)


def test_write_forgery_corpus(tmp_path):
    entries = write_forgery_corpus(str(tmp_path), count=2, seed=0)
    assert len(entries) == 2
    with open(str(tmp_path / "splices.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert [row["name"] for row in rows] == ["forged_00.jpg", "forged_01.jpg"]
    assert [row["q_carrier"] for row in rows] == ["70", "75"]
    assert (int(rows[0]["x"]), int(rows[0]["y"])) == entries[0][2][:2]


def test_separability():
    images = [
        gen_identity_pair(SynthIdentitySpec.from_seed(seed), settings.FACE_CANVAS)[0]
        for seed in range(6)
    ]
    intra, inter = check_separability(images, copies=2)
    assert intra < inter
