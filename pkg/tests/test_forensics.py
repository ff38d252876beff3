import json

import numpy as np
import pytest

from ocverify.exceptions import ConfigurationError, DecodeError, ImageError
from ocverify.forensics import (
    ElaConfig,
    ElaMap,
    ElaVerdict,
    block_recall,
    blocks_inside,
    check_image_forgery,
    classify_forgery,
    compute_ela,
    report_to_json,
)
from ocverify.imaging import Image, encode_jpeg
from ocverify.synthdata import gen_forgery_fixture
from tests.helpers import gradient_image


def block_map(cells, value=5.0, shape=(6, 6), background=0.0):
    means = np.full(shape, background)
    for bx, by in cells:
        means[by, bx] = value
    return ElaMap(block_means=means, requality=95)


def test_square_region_is_forged():
    report = classify_forgery(block_map([(2, 1), (3, 1), (2, 2), (3, 2)]))
    assert report.verdict is ElaVerdict.FORGED
    assert report.forged
    assert report.suspect_blocks == ((2, 1), (3, 1), (2, 2), (3, 2))
    assert report.stats == (0.0, 5.0)


@pytest.mark.parametrize(
    "cells,value",
    [
        ([(0, 0), (1, 0), (2, 0)], 5.0),
        ([(0, 0), (1, 1), (2, 2), (3, 3)], 5.0),
        ([(2, 1), (3, 1), (2, 2), (3, 2)], 1.0),
    ],
    ids=["small region", "diagonal", "below floor"],
)
def test_genuine_maps(cells, value):
    report = classify_forgery(block_map(cells, value))
    assert report.verdict is ElaVerdict.GENUINE
    assert report.suspect_blocks == ()


def test_uniformly_high_error_is_genuine():
    report = classify_forgery(block_map([(0, 0)], value=4.0, background=3.0))
    assert not report.forged
    assert report.median == 3.0


def test_only_large_regions_reported():
    cells = [(0, 0), (1, 0), (0, 1), (1, 1), (5, 5)]
    report = classify_forgery(block_map(cells))
    assert report.suspect_blocks == ((0, 0), (1, 0), (0, 1), (1, 1))


def test_min_region_one():
    report = classify_forgery(block_map([(5, 4)]), min_region=1)
    assert report.suspect_blocks == ((5, 4),)


def test_report_to_json():
    report = classify_forgery(block_map([(2, 1), (3, 1), (2, 2), (3, 2)]))
    text = report_to_json(report)
    assert list(json.loads(text)) == sorted(json.loads(text))
    assert json.loads(text) == {
        "max_block_mean": 5.0,
        "median_block_mean": 0.0,
        "requality": 95,
        "suspect_blocks": [[2, 1], [3, 1], [2, 2], [3, 2]],
        "verdict": "forged",
    }


def test_compute_ela_shapes(rgb_image):
    ela_map, ela_image = compute_ela(encode_jpeg(rgb_image, 90))
    assert ela_map.block_means.shape == (3, 4)
    assert (ela_map.blocks_w, ela_map.blocks_h) == (4, 3)
    assert ela_image.size == rgb_image.size
    assert ela_map.requality == 95


def test_compute_ela_partial_blocks():
    img = Image.from_array(np.full((20, 30), 128, np.uint8))
    ela_map, _ = compute_ela(encode_jpeg(img, 90))
    assert ela_map.block_means.shape == (2, 3)


def test_compute_ela_too_small():
    img = Image.from_array(np.full((7, 40), 128, np.uint8))
    with pytest.raises(ImageError):
        compute_ela(encode_jpeg(img, 90))


def test_compute_ela_not_jpeg():
    with pytest.raises(DecodeError):
        compute_ela(b"GIF89a not a jpeg")


def test_gain_amplifies_display_only(rgb_image):
    data = encode_jpeg(rgb_image, 80)
    plain_map, plain = compute_ela(data, gain=1.0)
    loud_map, loud = compute_ela(data, gain=20.0)
    assert np.array_equal(plain_map.block_means, loud_map.block_means)
    assert loud.pixels.astype(int).sum() >= plain.pixels.astype(int).sum()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"requality": 0},
        {"outlier_factor": 0.0},
        {"absolute_floor": -1.0},
        {"min_region": 0},
        {"gain": 0.0},
    ],
    ids=["quality", "factor", "floor", "region", "gain"],
)
def test_ela_config_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        ElaConfig(**kwargs)


def test_blocks_inside():
    assert len(blocks_inside((8, 8, 32, 32))) == 16
    unaligned = blocks_inside((4, 8, 32, 32))
    assert unaligned[0] == (1, 1)
    assert unaligned[-1] == (3, 4)
    assert len(unaligned) == 12
    assert blocks_inside((1, 1, 8, 8)) == []


def test_block_recall():
    report = classify_forgery(block_map([(1, 1), (2, 1), (1, 2), (2, 2)]))
    assert block_recall(report, (8, 8, 16, 16)) == 1.0
    assert block_recall(report, (8, 8, 32, 16)) == 0.5
    assert block_recall(report, (1, 1, 8, 8)) == 0.0


def test_smooth_image_is_genuine():
    report = check_image_forgery(encode_jpeg(gradient_image(64, 48, channels=3), 95))
    assert not report.forged
    assert report.ela_image is not None


def test_synthetic_faces_are_genuine(face_jpegs):
    for data in face_jpegs:
        assert not check_image_forgery(data).forged


def test_untouched_q95_block_means_stay_low(face_jpegs):
    smooth = encode_jpeg(gradient_image(64, 48, channels=3), 95)
    for data in (smooth,) + tuple(face_jpegs):
        ela_map, _ = compute_ela(data, requality=95)
        assert ela_map.block_means.max() <= 2.0


@pytest.mark.parametrize("seed,q_carrier", [(0, 70), (1, 75), (2, 80)], ids=str)
def test_forgery_fixture(seed, q_carrier):
    genuine, forged, rect = gen_forgery_fixture(seed, seed + 500, q_carrier, 95)

    report = check_image_forgery(forged)
    assert report.forged
    assert block_recall(report, rect) >= 0.5
    assert report.maximum > 2.5 * report.median

    assert not check_image_forgery(genuine).forged


@pytest.mark.parametrize("seed,q_carrier", [(0, 70), (1, 75), (2, 80)], ids=str)
def test_splice_error_levels_stay_below_four(seed, q_carrier):
    _, forged, rect = gen_forgery_fixture(seed, seed + 500, q_carrier, 95)
    ela_map, _ = compute_ela(forged, requality=95)

    inside = [ela_map.block_means[by, bx] for bx, by in blocks_inside(rect)]
    assert np.mean(inside) < 4.0
    assert not classify_forgery(ela_map, absolute_floor=4.0).forged
    assert classify_forgery(ela_map, absolute_floor=ElaConfig().absolute_floor).forged
