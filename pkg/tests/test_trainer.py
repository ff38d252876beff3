import numpy as np
import pytest

from ocverify.exceptions import ConfigurationError, EvaluationError, SamplingError
from ocverify.preprocess import AugmentConfig
from ocverify.structures import ModelTag, Phase
from ocverify.trainer import (
    TrainConfig,
    evaluate,
    metrics_from_distances,
    pair_distances,
    parse_theta_grid,
    sweep_distances,
    sweep_threshold,
    train,
    write_loss_curve_csv,
    write_sweep_csv,
)
from tests.helpers import gradient_image, tiny_arch


def quick_config(**kwargs):
    options = dict(
        variant=ModelTag.PRE_POST,
        epochs=2,
        batch_size=4,
        augment=AugmentConfig.disabled(),
        augment_copies=1,
        arch=tiny_arch(),
        seed=5,
    )
    options.update(kwargs)
    return TrainConfig(**options)


@pytest.mark.parametrize(
    "loss,mining,variant",
    [
        ("triplet", "random", ModelTag.PRE_POST),
        ("triplet", "mixed", ModelTag.PRE_PRE),
        ("contrastive", "random", ModelTag.POST_POST),
    ],
    ids=["triplet", "triplet mixed", "contrastive"],
)
def test_train(items, loss, mining, variant):
    result = train(items, quick_config(loss=loss, mining=mining, variant=variant))
    assert len(result.loss_curve) == 2
    assert all(np.isfinite(value) and value >= 0 for value in result.loss_curve)
    assert result.network.tag is variant
    if variant is ModelTag.PRE_POST:
        assert result.phases_seen == [Phase.PRE, Phase.POST]
    elif variant is ModelTag.PRE_PRE:
        assert result.phases_seen == [Phase.PRE]
    else:
        assert result.phases_seen == [Phase.POST]


def test_train_reproducible(items):
    first = train(items, quick_config())
    second = train(items, quick_config())
    assert first.loss_curve == second.loss_curve
    for name, value in first.network.params.items():
        assert np.array_equal(value, second.network.params[name])


def test_train_moves_parameters(items):
    cfg = quick_config()
    result = train(items, cfg)
    untrained = train(items, quick_config(lr=0.0))
    assert not np.array_equal(
        result.network.params["fc.weight"], untrained.network.params["fc.weight"]
    )


def test_train_one_identity(items):
    first = [item for item in items if item.identity_id == items[0].identity_id]
    with pytest.raises(SamplingError):
        train(first, quick_config())


@pytest.mark.parametrize(
    "kwargs",
    [
        {"epochs": 0},
        {"augment_copies": -1},
        {"lr": -0.1},
        {"alpha": 0.0},
        {"mining": "greedy"},
    ],
    ids=["epochs", "copies", "lr", "alpha", "mining"],
)
def test_train_config_invalid(kwargs):
    with pytest.raises((ConfigurationError, ValueError)):
        TrainConfig(**kwargs)


def test_metrics_from_distances():
    metrics = metrics_from_distances([0.1, 0.5, 2.0], [0.3, 1.0, 4.0, 5.0], theta=1.0)
    assert metrics.false_rejection == pytest.approx(1 / 3)
    assert metrics.false_acceptance == pytest.approx(2 / 4)
    assert metrics.accuracy == pytest.approx(4 / 7)
    assert metrics.threshold_used == 1.0
    assert (metrics.genuine_count, metrics.impostor_count) == (3, 4)


def test_metrics_empty():
    with pytest.raises(EvaluationError):
        metrics_from_distances([], [1.0], 0.5)


def test_metrics_match_recount(rng):
    genuine = rng.uniform(0.0, 3.0, size=17).tolist()
    impostor = rng.uniform(0.5, 4.0, size=23).tolist()
    for theta in (0.0, 0.7, 1.5, genuine[3], impostor[5], 4.0):
        metrics = metrics_from_distances(genuine, impostor, theta)
        rejected = sum(1 for d in genuine if not d <= theta)
        accepted = sum(1 for d in impostor if d <= theta)
        assert metrics.false_rejection == rejected / 17
        assert metrics.false_acceptance == accepted / 23
        assert metrics.accuracy == (40 - rejected - accepted) / 40


def test_sweep_eer_matches_exhaustive_scan():
    genuine = [0.2, 0.4, 0.9, 1.3, 2.1]
    impostor = [0.8, 1.6, 1.9, 2.8, 3.5]
    grid = parse_theta_grid("0:4:0.1")

    best_theta, best_gap = None, None
    for theta in grid:
        fr = sum(1 for d in genuine if d > theta) / len(genuine)
        fa = sum(1 for d in impostor if d <= theta) / len(impostor)
        if best_gap is None or abs(fa - fr) < best_gap:
            best_theta, best_gap = theta, abs(fa - fr)

    assert sweep_distances(genuine, impostor, grid).theta_eer == best_theta


def test_sweep_tie_takes_smaller_theta():
    result = sweep_distances([1.0], [3.0], [0.0, 1.0, 2.0, 3.0, 4.0])
    assert result.theta_eer == 1.0
    assert [row.accuracy for row in result.rows] == [0.5, 1.0, 1.0, 0.5, 0.5]


def test_sweep_monotone(rng):
    genuine = rng.uniform(0.0, 2.0, size=50)
    impostor = rng.uniform(1.0, 4.0, size=50)
    result = sweep_distances(genuine, impostor, parse_theta_grid("0:4:0.05"))
    fa = [row.false_acceptance for row in result.rows]
    fr = [row.false_rejection for row in result.rows]
    assert fa == sorted(fa)
    assert fr == sorted(fr, reverse=True)
    assert 1.0 <= result.theta_eer <= 2.0


@pytest.mark.parametrize("grid", [[], [1.0, 0.5]], ids=["empty", "unsorted"])
def test_sweep_bad_grid(grid):
    with pytest.raises(EvaluationError):
        sweep_distances([1.0], [2.0], grid)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("0:1:0.25", [0.0, 0.25, 0.5, 0.75, 1.0]),
        ("0.5, 1,1.5", [0.5, 1.0, 1.5]),
        ("2", [2.0]),
    ],
    ids=["range", "list", "single"],
)
def test_parse_theta_grid(text, expected):
    assert parse_theta_grid(text) == expected


def test_parse_default_grid():
    grid = parse_theta_grid("0:4:0.05")
    assert len(grid) == 81
    assert grid[-1] == 4.0


@pytest.mark.parametrize(
    "text", ["0:1", "a,b", "0:1:0"], ids=["parts", "words", "step"]
)
def test_parse_theta_grid_invalid(text):
    with pytest.raises(ConfigurationError):
        parse_theta_grid(text)


def test_evaluate(models):
    net = models[ModelTag.PRE_POST]
    a = gradient_image(channels=1)
    b = gradient_image(width=24, height=32, channels=1)
    distances = pair_distances(net, [(a, a), (a, b)])
    assert distances[0] == 0.0
    assert distances[1] > 0.0

    metrics = evaluate(net, [(a, a)], [(a, b)], theta=distances[1] / 2)
    assert metrics.accuracy == 1.0
    assert metrics.false_acceptance == 0.0

    with pytest.raises(EvaluationError):
        evaluate(net, [], [(a, b)], theta=1.0)


def test_sweep_threshold(models):
    a = gradient_image(channels=1)
    b = gradient_image(width=24, height=32, channels=1)
    result = sweep_threshold(models[ModelTag.PRE_POST], [(a, a)], [(a, b)], [0.0, 10.0])
    assert result.theta_eer == 0.0
    assert [row.false_acceptance for row in result.rows] == [0.0, 1.0]


def test_write_loss_curve_csv(tmp_path):
    path = str(tmp_path / "curve.csv")
    write_loss_curve_csv(path, [0.5, 0.25], config_text="seed=1")
    with open(path) as fh:
        assert fh.read() == "# seed=1\nepoch,mean_loss\n1,0.50000000\n2,0.25000000\n"


def test_write_sweep_csv(tmp_path):
    path = str(tmp_path / "sweep.csv")
    write_sweep_csv(path, sweep_distances([1.0], [3.0], [1.0, 2.0]))
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# theta_eer=1.000000"
    assert lines[1] == "theta,false_acceptance,false_rejection,accuracy"
    assert lines[2] == "1.000000,0.000000,0.000000,1.000000"
