from collections import OrderedDict

import numpy as np
import pytest

from ocverify.exceptions import (
    ConfigurationError,
    ShapeError,
    StaleCacheError,
    TrainingError,
)
from ocverify.imaging import Image
from ocverify.neuralnet import (
    ArchConfig,
    MomentumSGD,
    Network,
    image_to_tensor,
    init_network,
    parse_conv_blocks,
    sgd_step,
)
from ocverify.neuralnet import layers
from ocverify.neuralnet.network import format_conv_blocks
from ocverify.structures import ModelTag
from tests import settings
from tests.helpers import (
    gradient_image,
    numeric_gradient,
    params_snapshot,
    relative_error,
    tiny_arch,
    tiny_network,
)


def test_conv2d_shapes(rng):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 2))
    out = layers.conv2d_forward(x, w, np.zeros(4))
    assert out.shape == (2, 4, 5, 5)


def test_conv2d_is_cross_correlation():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    w = np.array([[[[1.0, 0.0], [0.0, 0.0]]]])
    out = layers.conv2d_forward(x, w, np.array([0.5]))
    assert out[0, 0].tolist() == [[0.5, 1.5], [3.5, 4.5]]


def test_conv2d_gradients(rng):
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    upstream = rng.normal(size=(2, 3, 3, 3))

    def loss():
        return float(np.sum(layers.conv2d_forward(x, w, b) * upstream))

    dx, dw, db = layers.conv2d_backward(upstream, x, w)
    assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6
    assert relative_error(dw, numeric_gradient(loss, w)) < 1e-6
    assert relative_error(db, numeric_gradient(loss, b)) < 1e-6


def test_relu_gradient_at_zero():
    z = np.array([-1.0, 0.0, 2.0])
    assert layers.relu_forward(z).tolist() == [0.0, 0.0, 2.0]
    assert layers.relu_backward(np.ones(3), z).tolist() == [0.0, 0.0, 1.0]


def test_maxpool_crops_remainder(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    out, argmax = layers.maxpool_forward(x, 2)
    assert out.shape == (1, 2, 2, 2)
    assert out[0, 0, 0, 0] == x[0, 0, :2, :2].max()

    dx = layers.maxpool_backward(np.ones_like(out), argmax, x.shape, 2)
    assert not dx[:, :, 4, :].any()
    assert not dx[:, :, :, 4].any()
    assert dx.sum() == out.size


def test_maxpool_ties_pick_first():
    x = np.ones((1, 1, 2, 2))
    out, argmax = layers.maxpool_forward(x, 2)
    dx = layers.maxpool_backward(np.ones_like(out), argmax, x.shape, 2)
    assert dx[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_maxpool_gradient(rng):
    x = rng.normal(size=(2, 3, 6, 6))
    upstream = rng.normal(size=(2, 3, 3, 3))

    def loss():
        return float(np.sum(layers.maxpool_forward(x, 2)[0] * upstream))

    _, argmax = layers.maxpool_forward(x, 2)
    dx = layers.maxpool_backward(upstream, argmax, x.shape, 2)
    assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6


def test_dense_gradients(rng):
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(3, 6))
    b = rng.normal(size=3)
    upstream = rng.normal(size=(4, 3))

    def loss():
        return float(np.sum(layers.dense_forward(x, w, b) * upstream))

    dx, dw, db = layers.dense_backward(upstream, x, w)
    assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6
    assert relative_error(dw, numeric_gradient(loss, w)) < 1e-6
    assert relative_error(db, numeric_gradient(loss, b)) < 1e-6


def test_l2_normalize(rng):
    z = rng.normal(size=(3, 4))
    y, norms = layers.l2_normalize_forward(z)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0)
    assert norms.shape == (3, 1)

    upstream = rng.normal(size=(3, 4))

    def loss():
        return float(np.sum(layers.l2_normalize_forward(z)[0] * upstream))

    y, norms = layers.l2_normalize_forward(z)
    dz = layers.l2_normalize_backward(upstream, y, norms)
    assert relative_error(dz, numeric_gradient(loss, z)) < 1e-6


def test_l2_normalize_zero_row():
    z = np.zeros((1, 3))
    y, norms = layers.l2_normalize_forward(z)
    assert not y.any()
    assert np.all(np.isfinite(y))
    assert not layers.l2_normalize_backward(np.ones((1, 3)), y, norms).any()


def test_parse_conv_blocks():
    assert parse_conv_blocks("16x3x2, 32x3x2") == ((16, 3, 2), (32, 3, 2))
    assert format_conv_blocks(((16, 3, 2), (32, 3, 2))) == "16x3x2,32x3x2"
    with pytest.raises(ConfigurationError):
        parse_conv_blocks("16x3")


def test_default_arch():
    arch = ArchConfig()
    assert arch.spatial_sizes() == [96, 47, 22, 10, 4]
    assert arch.flat_features == 128 * 4 * 4
    assert list(arch.parameter_shapes())[-2:] == ["fc.weight", "fc.bias"]
    assert arch.parameter_shapes()["fc.weight"] == (64, 2048)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"input_side": 8},
        {"embedding_dim": 1},
        {"input_channels": 2},
        {"conv_blocks": ()},
        {"conv_blocks": ((0, 3, 2),)},
    ],
    ids=["pool underflow", "dimension", "channels", "no blocks", "zero channels"],
)
def test_arch_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        ArchConfig(**kwargs)


def _hand_network():
    arch = ArchConfig(
        input_side=1,
        conv_blocks=((2, 1, 1),),
        embedding_dim=2,
        normalize_embeddings=False,
    )
    params = OrderedDict(
        [
            ("conv0.weight", np.array([2.0, 0.0]).reshape(2, 1, 1, 1)),
            ("conv0.bias", np.zeros(2)),
            ("fc.weight", np.eye(2)),
            ("fc.bias", np.zeros(2)),
        ]
    )
    return Network(arch, params, ModelTag.PRE_POST)


def test_forward_by_hand():
    out, _ = _hand_network().forward(np.full((1, 1, 1, 1), 0.5))
    assert out.tolist() == [[1.0, 0.0]]


def test_network_rejects_bad_params():
    arch = tiny_arch()
    params = init_network(arch, 0).params
    params = OrderedDict(params)
    params["fc.bias"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(ShapeError) as excinfo:
        Network(arch, params, ModelTag.PRE_POST)
    assert excinfo.value.layer == "fc.bias"


def test_forward_shape_error():
    net = tiny_network()
    with pytest.raises(ShapeError) as excinfo:
        net.forward(np.zeros((1, 1, 15, 15)))
    assert excinfo.value.layer == "input"


def test_backward_stale_cache(rng):
    net = tiny_network()
    batch = rng.random((2, 1, settings.TINY_SIDE, settings.TINY_SIDE))
    out, cache = net.forward(batch)
    net.set_params(params_snapshot(net))
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones_like(out))

    other = tiny_network()
    _, cache = other.forward(batch)
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones_like(out))


def test_backward_upstream_shape(rng):
    net = tiny_network()
    out, cache = net.forward(rng.random((2, 1, settings.TINY_SIDE, settings.TINY_SIDE)))
    with pytest.raises(ShapeError) as excinfo:
        net.backward(cache, np.ones((3, settings.TINY_DIM)))
    assert excinfo.value.layer == "output"


@pytest.mark.parametrize("normalize", [True, False], ids=["normalized", "raw"])
def test_network_gradients(rng, normalize):
    net = tiny_network(normalize_embeddings=normalize)
    batch = rng.random((2, 1, settings.TINY_SIDE, settings.TINY_SIDE))
    upstream = rng.normal(size=(2, settings.TINY_DIM))

    def loss():
        return float(np.sum(net.forward(batch)[0] * upstream))

    out, cache = net.forward(batch)
    grads = net.backward(cache, upstream)
    assert list(grads) == list(net.params)

    for name, param in net.params.items():
        expected = numeric_gradient(loss, param, eps=1e-6)
        assert relative_error(grads[name], expected) < 1e-4, name


def test_non_finite_activation(rng):
    net = tiny_network()
    params = params_snapshot(net)
    params["conv0.weight"][0, 0, 0, 0] = np.inf
    net.set_params(params)
    with pytest.raises(TrainingError):
        net.forward(rng.random((1, 1, settings.TINY_SIDE, settings.TINY_SIDE)))


def test_zero_network_embeds_zero():
    net = tiny_network()
    net.set_params(
        OrderedDict((name, np.zeros_like(value)) for name, value in net.params.items())
    )
    embedding = net.embed(gradient_image(16, 16))
    assert not embedding.any()


def test_init_network_reproducible():
    a = init_network(tiny_arch(), 5)
    b = init_network(tiny_arch(), 5)
    c = init_network(tiny_arch(), 6)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert not np.array_equal(a.params["conv0.weight"], c.params["conv0.weight"])
    assert a.dtype == np.float32
    assert not a.params["fc.bias"].any()


def test_init_network_he_scale():
    net = init_network(ArchConfig(), 0)
    weight = net.params["conv1.weight"]
    assert abs(weight.std() - np.sqrt(2.0 / (16 * 9))) < 0.01


def test_network_tag():
    net = init_network(tiny_arch(), 0, ModelTag.POST_POST)
    assert net.tag is ModelTag.POST_POST
    assert net.astype(np.float64).tag is ModelTag.POST_POST


def test_embed_unit_norm(rgb_image):
    net = init_network(tiny_arch(), 0)
    embedding = net.embed(rgb_image)
    assert embedding.shape == (settings.TINY_DIM,)
    assert np.isclose(np.linalg.norm(embedding), 1.0, atol=1e-5)


def test_embed_batch_matches_embed(rgb_image, gray_image):
    net = init_network(tiny_arch(), 0)
    table = net.embed_batch([rgb_image, gray_image], batch_size=1)
    assert np.allclose(table[0], net.embed(rgb_image), atol=1e-6)
    assert np.allclose(table[1], net.embed(gray_image), atol=1e-6)


def test_image_to_tensor(rgb_image, gray_image):
    tensor = image_to_tensor(rgb_image, tiny_arch())
    assert tensor.shape == (1, settings.TINY_SIDE, settings.TINY_SIDE)
    assert tensor.dtype == np.float32
    assert 0.0 <= tensor.min() and tensor.max() <= 1.0

    color = image_to_tensor(gray_image, tiny_arch(input_channels=3))
    assert color.shape == (3, settings.TINY_SIDE, settings.TINY_SIDE)
    assert np.array_equal(color[0], color[2])


def test_image_to_tensor_exact_values():
    img = Image.from_array(np.full((16, 16), 51, np.uint8))
    tensor = image_to_tensor(img, tiny_arch())
    assert np.allclose(tensor, 0.2)


def test_sgd_step(rng):
    net = tiny_network()
    before = params_snapshot(net)
    grads = OrderedDict((name, np.ones_like(value)) for name, value in before.items())

    net, velocity = sgd_step(net, grads, lr=0.1, momentum=0.9)
    assert np.allclose(net.params["fc.bias"], before["fc.bias"] - 0.1)

    net, velocity = sgd_step(net, grads, lr=0.1, momentum=0.9, state=velocity)
    assert np.allclose(velocity["fc.bias"], 1.9)
    assert np.allclose(net.params["fc.bias"], before["fc.bias"] - 0.1 - 0.19)


def test_sgd_step_invalidates_cache(rng):
    net = tiny_network()
    out, cache = net.forward(rng.random((1, 1, settings.TINY_SIDE, settings.TINY_SIDE)))
    grads = net.backward(cache, np.ones_like(out))
    MomentumSGD(lr=0.01).step(net, grads)
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones_like(out))


def test_sgd_non_finite_gradient():
    net = tiny_network()
    grads = OrderedDict(
        (name, np.zeros_like(value)) for name, value in net.params.items()
    )
    grads["conv1.bias"][0] = np.nan

    optimizer = MomentumSGD()
    optimizer.steps = 12
    with pytest.raises(TrainingError) as excinfo:
        optimizer.step(net, grads)
    assert excinfo.value.step == 12
    assert "conv1.bias" in excinfo.value.message


def test_sgd_gradient_names():
    net = tiny_network()
    with pytest.raises(ConfigurationError):
        sgd_step(net, {"fc.bias": np.zeros(settings.TINY_DIM)}, 0.1, 0.9)


@pytest.mark.parametrize(
    "kwargs", [{"lr": -1.0}, {"momentum": 1.0}], ids=["lr", "momentum"]
)
def test_momentum_sgd_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        MomentumSGD(**kwargs)
