"""Hand-differentiated convolutional embedding network."""
from ocverify.neuralnet.modelfile import (
    MODEL_SUFFIX,
    dumps_network,
    load_network,
    loads_network,
    save_network,
)
from ocverify.neuralnet.network import (
    ArchConfig,
    ForwardCache,
    Network,
    backward,
    embed,
    forward,
    image_to_tensor,
    init_network,
    parse_conv_blocks,
    stack_images,
)
from ocverify.neuralnet.optim import MomentumSGD, sgd_step

__all__ = [
    "MODEL_SUFFIX",
    "ArchConfig",
    "ForwardCache",
    "MomentumSGD",
    "Network",
    "backward",
    "dumps_network",
    "embed",
    "forward",
    "image_to_tensor",
    "init_network",
    "load_network",
    "loads_network",
    "parse_conv_blocks",
    "save_network",
    "sgd_step",
    "stack_images",
]
