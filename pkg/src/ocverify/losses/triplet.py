"""Triplet loss: ``[||a - p||^2 - ||a - n||^2 + alpha]+`` per triplet."""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ocverify.base import LossConfig, MetricLoss, TowerBatch
from ocverify.exceptions import SamplingError
from ocverify.losses.sampling import sample_triplets
from ocverify.structures import MiningStrategy

__all__ = ["TripletLoss", "triplet_batch", "triplet_loss"]


def triplet_loss(
    emb_a: np.ndarray, emb_p: np.ndarray, emb_n: np.ndarray, alpha: float = 0.2
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Single-triplet term and gradients; subgradient 0 at the hinge.

    :return: ``(loss, grad_a, grad_p, grad_n)``.
    """
    a = np.asarray(emb_a, dtype=np.float64)
    p = np.asarray(emb_p, dtype=np.float64)
    n = np.asarray(emb_n, dtype=np.float64)

    value = float(np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + alpha)
    if value > 0:
        return value, 2.0 * (n - p), -2.0 * (a - p), 2.0 * (a - n)
    zeros = np.zeros_like(a)
    return 0.0, zeros, zeros.copy(), zeros.copy()


def triplet_batch(
    a: np.ndarray, p: np.ndarray, n: np.ndarray, alpha: float = 0.2
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean loss over ``N`` rows and per-row gradients divided by ``N``."""
    count = len(a)
    values = np.sum((a - p) ** 2, axis=1) - np.sum((a - n) ** 2, axis=1) + alpha
    active = (values > 0)[:, np.newaxis] * (2.0 / count)

    grad_a = (active * (n - p)).astype(a.dtype, copy=False)
    grad_p = (-active * (a - p)).astype(a.dtype, copy=False)
    grad_n = (active * (a - n)).astype(a.dtype, copy=False)
    return float(np.maximum(values, 0.0).mean()), grad_a, grad_p, grad_n


class TripletLoss(MetricLoss):
    """Anchor/positive/negative margin loss with optional semi-hard mining."""

    name = "triplet"
    towers = 3
    strategies = (
        MiningStrategy.RANDOM,
        MiningStrategy.SEMI_HARD,
        MiningStrategy.MIXED,
    )

    def __init__(self, config: LossConfig = LossConfig(), **kwargs) -> None:
        super().__init__(config, **kwargs)

    @property
    def margin(self) -> float:
        return self.config.alpha

    def sample(
        self,
        view,
        count: int,
        rng: np.random.Generator,
        embeddings: Optional[np.ndarray] = None,
    ) -> TowerBatch:
        if self.needs_embeddings and embeddings is None:
            raise SamplingError(
                "Strategy %s needs an embedding table." % self.strategy.value
            )
        triplets = sample_triplets(
            view,
            count,
            self.strategy,
            rng,
            alpha=self.config.alpha,
            embeddings=embeddings,
            hard_fraction=self.hard_fraction,
        )
        return TowerBatch(
            indices=np.array([t.indices for t in triplets], dtype=np.int64)
        )

    def compute(
        self, outputs: Sequence[np.ndarray], labels: Optional[np.ndarray] = None
    ) -> Tuple[float, List[np.ndarray]]:
        a, p, n = outputs
        loss, grad_a, grad_p, grad_n = triplet_batch(a, p, n, self.config.alpha)
        return loss, [grad_a, grad_p, grad_n]
