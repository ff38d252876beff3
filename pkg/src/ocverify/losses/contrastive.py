"""Contrastive loss for the siamese (two-tower) model.

Per pair, with ``D = ||u - v||^2``::

    loss = 0.5 * ((1 - Y) * D + Y * max(0, m - D))

``Y = 0`` marks a genuine pair (pulled together), ``Y = 1`` an impostor
pair (pushed beyond ``m``).
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ocverify.base import LossConfig, MetricLoss, TowerBatch
from ocverify.losses.sampling import sample_pairs

__all__ = ["ContrastiveLoss", "contrastive_batch", "contrastive_loss"]


def contrastive_loss(
    emb_u: np.ndarray, emb_v: np.ndarray, label: int, m: float = 1.0
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Single-pair term and its gradients.

    The hinge uses subgradient 0 at ``D == m``.

    :return: ``(loss, grad_u, grad_v)``.
    """
    emb_u = np.asarray(emb_u, dtype=np.float64)
    emb_v = np.asarray(emb_v, dtype=np.float64)
    diff = emb_u - emb_v
    distance = float(diff @ diff)

    if label == 0:
        return 0.5 * distance, diff, -diff

    gap = m - distance
    if gap > 0:
        return 0.5 * gap, -diff, diff
    zeros = np.zeros_like(diff)
    return 0.0, zeros, zeros.copy()


def contrastive_batch(
    u: np.ndarray, v: np.ndarray, labels: np.ndarray, m: float = 1.0
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean loss over ``N`` rows and per-row gradients divided by ``N``."""
    diff = u - v
    distance = np.sum(diff * diff, axis=1)
    labels = np.asarray(labels).reshape(-1)
    n = len(labels)

    impostor = labels == 1
    gap = m - distance
    active = impostor & (gap > 0)

    terms = np.where(impostor, 0.5 * np.maximum(gap, 0.0), 0.5 * distance)
    coeff = np.where(impostor, np.where(active, -1.0, 0.0), 1.0)[:, np.newaxis]

    grad_u = (coeff * diff / n).astype(u.dtype, copy=False)
    return float(terms.mean()), grad_u, -grad_u


class ContrastiveLoss(MetricLoss):
    """Pairwise margin loss over balanced genuine/impostor pairs."""

    name = "contrastive"
    towers = 2

    def __init__(self, config: LossConfig = LossConfig(), **kwargs) -> None:
        super().__init__(config, **kwargs)

    @property
    def margin(self) -> float:
        return self.config.m

    def sample(
        self,
        view,
        count: int,
        rng: np.random.Generator,
        embeddings: Optional[np.ndarray] = None,
    ) -> TowerBatch:
        pairs = sample_pairs(view, count, rng)
        return TowerBatch(
            indices=np.array([p.indices for p in pairs], dtype=np.int64),
            labels=np.array([p.label for p in pairs], dtype=np.int64),
        )

    def compute(
        self, outputs: Sequence[np.ndarray], labels: Optional[np.ndarray] = None
    ) -> Tuple[float, List[np.ndarray]]:
        u, v = outputs
        if labels is None:
            raise ValueError("Contrastive loss needs pair labels.")
        loss, grad_u, grad_v = contrastive_batch(u, v, labels, self.config.m)
        return loss, [grad_u, grad_v]
