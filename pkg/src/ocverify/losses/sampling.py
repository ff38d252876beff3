"""Pair and triplet sampling over a training view.

Semi-hard mining is offline: it reads an embedding table that the caller
refreshes (the trainer does so once per epoch).
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ocverify.exceptions import SamplingError
from ocverify.helpers import derive_rng
from ocverify.structures import MiningStrategy

__all__ = [
    "Pair",
    "Triplet",
    "hardest_semi_hard_negative",
    "sample_pairs",
    "sample_triplets",
    "view_embeddings",
]

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.Generator]


@dataclass(frozen=True)
class Triplet:
    """Item indices of an anchor, a positive and a negative."""

    anchor: int
    positive: int
    negative: int

    @property
    def indices(self) -> Tuple[int, int, int]:
        return self.anchor, self.positive, self.negative


@dataclass(frozen=True)
class Pair:
    """Item indices of a pair; ``label`` 0 is genuine, 1 impostor."""

    u: int
    v: int
    label: int

    @property
    def indices(self) -> Tuple[int, int]:
        return self.u, self.v


def _as_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(seed)


class _Direction:
    """Anchor side and partner side of one sampling direction."""

    def __init__(self, view, anchor_side: Sequence[int], partner_side: Sequence[int]):
        self.anchors = view.groups(anchor_side)
        self.partners = view.groups(partner_side)
        self.same_side = tuple(anchor_side) == tuple(partner_side)

        minimum = 2 if self.same_side else 1
        self.eligible = [
            identity
            for identity in self.anchors
            if len(self.partners.get(identity, [])) >= minimum
            and len(self.partners) >= 2
        ]
        self.negatives: Dict[str, np.ndarray] = {
            identity: np.array(
                [
                    i
                    for other, idx in self.partners.items()
                    if other != identity
                    for i in idx
                ],
                dtype=np.int64,
            )
            for identity in self.eligible
        }

    def anchor_and_positive(self, rng: np.random.Generator) -> Tuple[str, int, int]:
        identity = self.eligible[int(rng.integers(len(self.eligible)))]
        candidates = self.anchors[identity]
        anchor = candidates[int(rng.integers(len(candidates)))]
        positives = [i for i in self.partners[identity] if i != anchor]
        positive = positives[int(rng.integers(len(positives)))]
        return identity, anchor, positive


def _directions(view) -> List[_Direction]:
    if len(view.identities()) < 2:
        raise SamplingError(
            "Sampling needs at least two identities, view %s has %d."
            % (view.variant.value, len(view.identities()))
        )

    directions = [_Direction(view, view.side_a, view.side_b)]
    if view.cross_phase:
        directions.append(_Direction(view, view.side_b, view.side_a))

    directions = [d for d in directions if d.eligible]
    if not directions:
        raise SamplingError(
            "No identity of view %s has an anchor and a distinct positive."
            % view.variant.value
        )
    return directions


def hardest_semi_hard_negative(
    embeddings: np.ndarray,
    anchor: int,
    positive: int,
    candidates: np.ndarray,
    alpha: float,
) -> int:
    """Pick a negative for ``(anchor, positive)``.

    Prefers the closest negative with ``d(a, p) < d(a, n) < d(a, p) + alpha``
    and falls back to the closest negative overall. Ties go to the first
    candidate.
    """
    a = embeddings[anchor]
    d_pos = float(np.sum((a - embeddings[positive]) ** 2))
    d_neg = np.sum((embeddings[candidates] - a) ** 2, axis=1)

    semi_hard = (d_neg > d_pos) & (d_neg < d_pos + alpha)
    if np.any(semi_hard):
        pool = np.flatnonzero(semi_hard)
        return int(candidates[pool[np.argmin(d_neg[pool])]])
    return int(candidates[np.argmin(d_neg)])


def view_embeddings(view, net, tensors: Optional[np.ndarray] = None) -> np.ndarray:
    """Embedding table of every item of ``view``, shape ``(len(view), d)``."""
    if tensors is not None:
        return net.embed_tensors(tensors)
    return net.embed_batch([item.image for item in view.items])


def sample_triplets(
    view,
    count: int,
    strategy=MiningStrategy.RANDOM,
    seed: Seed = 0,
    alpha: float = 0.2,
    embeddings: Optional[np.ndarray] = None,
    net=None,
    hard_fraction: float = 0.5,
) -> List[Triplet]:
    """Sample ``count`` triplets whose anchor and positive share an identity
    and whose negative does not.

    .. code-block:: python

        triplets = sample_triplets(view, 32, MiningStrategy.SEMI_HARD, seed=3,
                                   embeddings=table)

    :param view: Training view.
    :type view: :class:`.TrainingView`

    :param count: Number of triplets ``N``.
    :type count: int

    :param strategy: (optional) ``random``, ``semi-hard`` or ``mixed``.
    :type strategy: :class:`.MiningStrategy` or str

    :param seed: (optional) Seed or generator.
    :type seed: int or numpy.random.Generator

    :param alpha: (optional) Triplet margin for the semi-hard band.
    :type alpha: float

    :param embeddings: (optional) Embedding table of the view's items.
    :type embeddings: numpy.ndarray or None

    :param net: (optional) Network used to build the table when
      ``embeddings`` is absent and the strategy needs one.
    :type net: :class:`.Network` or None

    :param hard_fraction: (optional) Probability that a ``mixed`` triplet is
      mined semi-hard.
    :type hard_fraction: float

    :return: Triplets of view item indices.
    :rtype: List[:class:`.Triplet`]

    :raises SamplingError: If the view has fewer than two identities or no
      anchor with a distinct positive.
    """
    strategy = MiningStrategy.parse(strategy)
    rng = _as_rng(seed)
    directions = _directions(view)

    if strategy is not MiningStrategy.RANDOM and embeddings is None:
        if net is None:
            raise SamplingError(
                "Strategy %s needs embeddings or a network." % strategy.value
            )
        embeddings = view_embeddings(view, net)

    triplets = []
    for _ in range(count):
        direction = directions[int(rng.integers(len(directions)))]
        identity, anchor, positive = direction.anchor_and_positive(rng)
        candidates = direction.negatives[identity]

        hard = strategy is MiningStrategy.SEMI_HARD
        if strategy is MiningStrategy.MIXED:
            hard = bool(rng.random() < hard_fraction)

        if hard:
            negative = hardest_semi_hard_negative(
                embeddings, anchor, positive, candidates, alpha
            )
        else:
            negative = int(candidates[int(rng.integers(len(candidates)))])
        triplets.append(Triplet(anchor, positive, negative))
    return triplets


def sample_pairs(view, count: int, seed: Seed = 0) -> List[Pair]:
    """Balanced pairs: even positions genuine (label 0), odd positions
    impostor (label 1).

    :raises SamplingError: Under the same conditions as
      :func:`sample_triplets`.
    """
    rng = _as_rng(seed)
    directions = _directions(view)

    pairs = []
    for position in range(count):
        direction = directions[int(rng.integers(len(directions)))]
        identity, anchor, positive = direction.anchor_and_positive(rng)
        if position % 2 == 0:
            pairs.append(Pair(anchor, positive, 0))
        else:
            candidates = direction.negatives[identity]
            negative = int(candidates[int(rng.integers(len(candidates)))])
            pairs.append(Pair(anchor, negative, 1))
    return pairs
