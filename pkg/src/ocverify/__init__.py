"""One-shot face verification and JPEG forgery screening.

:copyright: (c) 2026 by the ocverify authors.
:license: MIT, see LICENSE for more details.
"""
import logging
from enum import Enum, unique

from ocverify import messages
from ocverify.base import LossConfig, MetricLoss
from ocverify.exceptions import OcverifyError
from ocverify.structures import MiningStrategy, ModelTag, Phase
from ocverify.typed import Losses

__all__ = [
    "LossConfig",
    "LossName",
    "MetricLoss",
    "MiningStrategy",
    "ModelTag",
    "Phase",
    "get_loss",
    "get_loss_by_name",
]

__title__ = "ocverify"
__version__ = "0.1.0"
__author__ = "ocverify authors"
__license__ = "MIT"
__copyright__ = "Copyright 2026 ocverify authors"


@unique
class LossName(Enum):
    """LossName enumeration."""

    CONTRASTIVE = "contrastive"
    TRIPLET = "triplet"


_LOSS_IMPORTS = {
    LossName.CONTRASTIVE: ("ocverify.losses.contrastive", "ContrastiveLoss"),
    LossName.TRIPLET: ("ocverify.losses.triplet", "TripletLoss"),
}


def get_loss(loss: LossName) -> Losses:
    """Get loss class by LossName enumeration member.

    .. code-block:: python

        >>> from ocverify import LossName, get_loss
        >>> loss_cls = get_loss(LossName.TRIPLET)
        <class 'ocverify.losses.triplet.TripletLoss'>

    :param loss: LossName member.
    :type loss: :class:`.LossName`

    :return: Loss class.
    :rtype: :class:`.ContrastiveLoss`, :class:`.TripletLoss`
    """
    if loss in _LOSS_IMPORTS:
        mod_name, loss_name = _LOSS_IMPORTS[loss]
        _mod = __import__(mod_name, globals(), locals(), [loss_name])
        return getattr(_mod, loss_name)

    raise OcverifyError(messages.LOSS_NOT_FOUND % loss)


def get_loss_by_name(loss_name: str) -> Losses:
    """Get loss class by name.

    .. code-block:: python

        >>> from ocverify import get_loss_by_name
        >>> loss_cls = get_loss_by_name('contrastive')
        <class 'ocverify.losses.contrastive.ContrastiveLoss'>

    :param loss_name: Loss name, case-insensitive.

        * `contrastive`
        * `triplet`
    :type loss_name: str

    :return: Loss class.
    :rtype: :class:`.ContrastiveLoss`, :class:`.TripletLoss`

    :raises OcverifyError: If no loss has that name.
    """
    try:
        loss = LossName(str(loss_name).strip().lower())
    except ValueError:
        raise OcverifyError(messages.LOSS_NOT_FOUND % loss_name)
    return get_loss(loss)


# Set up logging to ``/dev/null`` like a library is supposed to.
logging.getLogger("ocverify").addHandler(logging.NullHandler())
