import abc
import logging
from abc import abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ocverify import messages
from ocverify.exceptions import ConfigurationError
from ocverify.structures import MiningStrategy

__all__ = ["LossConfig", "MetricLoss", "TowerBatch"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    """Margins in squared-distance units and the mini-batch size.

    :param m: Contrastive margin.
    :type m: float

    :param alpha: Triplet margin.
    :type alpha: float

    :param batch_size: Examples per step.
    :type batch_size: int

    :raises ConfigurationError: On non-positive values.
    """

    m: float = 1.0
    alpha: float = 0.2
    batch_size: int = 32

    def __post_init__(self) -> None:
        if not self.m > 0:
            raise ConfigurationError("Contrastive margin must be > 0, got %r." % self.m)
        if not self.alpha > 0:
            raise ConfigurationError("Triplet margin must be > 0, got %r." % self.alpha)
        if self.batch_size < 1:
            raise ConfigurationError(
                "Batch size must be >= 1, got %r." % self.batch_size
            )


@dataclass(frozen=True)
class TowerBatch:
    """One mini-batch of sampled examples.

    ``indices`` has shape ``(N, towers)`` and indexes the items of a
    training view; ``labels`` holds one pair label per row for pairwise
    losses and is ``None`` otherwise.
    """

    indices: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.indices)


class MetricLoss(metaclass=abc.ABCMeta):
    """Abstract metric-learning loss.

    A loss knows how many weight-shared towers one example feeds
    (:attr:`towers`), how to sample examples from a training view and how
    to turn tower outputs into a mean batch loss plus per-row gradients.

    .. code-block:: python

        from ocverify import LossName, get_loss

        loss_cls = get_loss(LossName.TRIPLET)
        loss = loss_cls(LossConfig(alpha=0.2), strategy=MiningStrategy.MIXED)

    :param config: (optional) Margins and batch size.
    :type config: :class:`.LossConfig`

    :param strategy: (optional) Negative mining strategy.
    :type strategy: :class:`.MiningStrategy` or str

    :param hard_fraction: (optional) Share of semi-hard examples for the
      ``mixed`` strategy.
    :type hard_fraction: float
    """

    #: Loss name, as used by configuration files.
    name = None

    #: Number of embeddings one example contributes.
    towers = 0

    #: Strategies the loss can honour; others fall back to random.
    strategies: Tuple[MiningStrategy, ...] = (MiningStrategy.RANDOM,)

    def __init__(
        self,
        config: LossConfig = LossConfig(),
        strategy=MiningStrategy.RANDOM,
        hard_fraction: float = 0.5,
    ) -> None:
        strategy = MiningStrategy.parse(strategy)
        if strategy not in self.strategies:
            logger.warning(messages.OPTION_NOT_SUPPORTED, "mining=%s" % strategy.value)
            strategy = MiningStrategy.RANDOM
        if not 0.0 <= hard_fraction <= 1.0:
            raise ConfigurationError(
                "Hard fraction must be in [0, 1], got %r." % hard_fraction
            )

        self.config = config
        self.strategy = strategy
        self.hard_fraction = hard_fraction

    def __repr__(self) -> str:
        return "<%s strategy=%s>" % (self.__class__.__name__, self.strategy.value)

    @property
    def needs_embeddings(self) -> bool:
        """Whether :meth:`sample` wants a refreshed embedding table."""
        return self.strategy is not MiningStrategy.RANDOM

    @abstractmethod
    def sample(
        self,
        view,
        count: int,
        rng: np.random.Generator,
        embeddings: Optional[np.ndarray] = None,
    ) -> TowerBatch:
        """Draw ``count`` examples from a training view.

        :param view: Training view.
        :type view: :class:`.TrainingView`

        :param count: Number of examples.
        :type count: int

        :param rng: Random generator owned by the caller.
        :type rng: :class:`numpy.random.Generator`

        :param embeddings: (optional) Current embeddings of every view item,
          required by mining strategies other than ``random``.
        :type embeddings: numpy.ndarray or None

        :return: Sampled batch.
        :rtype: :class:`.TowerBatch`

        :raises SamplingError: If the view cannot satisfy the example
          invariants.
        """
        pass

    @abstractmethod
    def compute(
        self, outputs: Sequence[np.ndarray], labels: Optional[np.ndarray] = None
    ) -> Tuple[float, List[np.ndarray]]:
        """Mean batch loss and the gradient w.r.t. every tower output.

        :param outputs: One ``(N, d)`` array per tower.
        :type outputs: Sequence[numpy.ndarray]

        :param labels: (optional) Pair labels for pairwise losses.
        :type labels: numpy.ndarray or None

        :return: ``(loss, grads)``; ``grads[t]`` has the shape of
          ``outputs[t]`` and already includes the ``1/N`` of the mean.
        :rtype: tuple
        """
        pass
