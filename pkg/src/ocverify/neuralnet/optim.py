"""Momentum SGD."""
import logging
from collections import OrderedDict
from typing import Dict, Optional, Tuple

import numpy as np

from ocverify import messages
from ocverify.exceptions import ConfigurationError, TrainingError
from ocverify.neuralnet.network import Network
from ocverify.typed import Grads

__all__ = ["MomentumSGD", "sgd_step"]

logger = logging.getLogger(__name__)

Velocity = Dict[str, np.ndarray]


def sgd_step(
    net: Network,
    grads: Grads,
    lr: float,
    momentum: float,
    state: Optional[Velocity] = None,
    step: Optional[int] = None,
) -> Tuple[Network, Velocity]:
    """One classic momentum update: ``v = momentum * v + g``; ``p = p - lr * v``.

    Parameters of ``net`` are replaced, so forward caches taken before the
    call become stale.

    :param net: Network to update.
    :type net: :class:`.Network`

    :param grads: Gradients keyed like ``net.params``.
    :type grads: dict

    :param lr: Learning rate.
    :type lr: float

    :param momentum: Momentum coefficient.
    :type momentum: float

    :param state: (optional) Velocity from the previous step.
    :type state: dict or None

    :param step: (optional) Step index reported on failure.
    :type step: int or None

    :return: ``(net, velocity)``.
    :rtype: tuple

    :raises TrainingError: If a gradient is not finite.
    """
    if set(grads) != set(net.params):
        raise ConfigurationError(
            "Gradient names %s do not match parameters %s."
            % (sorted(grads), sorted(net.params))
        )

    for name in net.params:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(messages.NON_FINITE_GRADIENT % name, step=step)

    state = state if state is not None else {}
    velocity: Velocity = OrderedDict()
    updated = OrderedDict()
    for name, param in net.params.items():
        grad = np.asarray(grads[name], dtype=param.dtype)
        previous = state.get(name)
        v = grad if previous is None else momentum * previous + grad
        velocity[name] = v.astype(param.dtype, copy=False)
        updated[name] = (param - lr * velocity[name]).astype(param.dtype, copy=False)

    net.set_params(updated)
    return net, velocity


class MomentumSGD:
    """Stateful wrapper around :func:`sgd_step`.

    :param lr: Learning rate (``>= 0``).
    :type lr: float

    :param momentum: Momentum coefficient in ``[0, 1)``.
    :type momentum: float
    """

    def __init__(self, lr: float = 0.01, momentum: float = 0.9) -> None:
        if lr < 0:
            raise ConfigurationError("Learning rate must be >= 0, got %r." % lr)
        if not 0 <= momentum < 1:
            raise ConfigurationError("Momentum must be in [0, 1), got %r." % momentum)
        self.lr = lr
        self.momentum = momentum
        self.velocity: Velocity = {}
        self.steps = 0

    def step(self, net: Network, grads: Grads) -> Network:
        net, self.velocity = sgd_step(
            net, grads, self.lr, self.momentum, self.velocity, step=self.steps
        )
        self.steps += 1
        return net

    def __repr__(self) -> str:
        return "<MomentumSGD lr=%g momentum=%g steps=%d>" % (
            self.lr,
            self.momentum,
            self.steps,
        )
