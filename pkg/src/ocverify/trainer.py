"""Training loops, verification metrics and threshold sweeps.

Distances are squared L2 everywhere; a pair is accepted when its distance
is at most the threshold ``theta``.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ocverify import get_loss_by_name, messages
from ocverify.base import LossConfig
from ocverify.dataset import (
    DatasetItem,
    build_variant_dataset,
    expand_with_augmentations,
    make_eval_pairs,
    split_identities,
)
from ocverify.exceptions import (
    ConfigurationError,
    EvaluationError,
    SamplingError,
    TrainingError,
)
from ocverify.helpers import derive_rng
from ocverify.imaging import Image
from ocverify.neuralnet import (
    ArchConfig,
    MomentumSGD,
    Network,
    init_network,
    stack_images,
)
from ocverify.preprocess import AugmentConfig
from ocverify.structures import MiningStrategy, ModelTag, Phase
from ocverify.typed import PathLike

__all__ = [
    "EvalMetrics",
    "SweepResult",
    "TrainConfig",
    "TrainResult",
    "build_variant_dataset",
    "evaluate",
    "expand_with_augmentations",
    "make_eval_pairs",
    "metrics_from_distances",
    "pair_distances",
    "parse_theta_grid",
    "split_identities",
    "sweep_distances",
    "sweep_threshold",
    "train",
    "write_loss_curve_csv",
    "write_metrics_csv",
    "write_sweep_csv",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on.

    Defaults: 100 epochs, batches of 32, lr 0.01, momentum 0.9 and 8
    augmented copies per original.

    :raises ConfigurationError: On out-of-range values.
    """

    variant: ModelTag = ModelTag.PRE_POST
    loss: str = "triplet"
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_copies: int = 8
    seed: int = 0
    mining: MiningStrategy = MiningStrategy.MIXED
    hard_fraction: float = 0.5
    margin: float = 1.0
    alpha: float = 0.2
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", ModelTag.parse(self.variant))
        object.__setattr__(self, "mining", MiningStrategy.parse(self.mining))
        if self.epochs < 1:
            raise ConfigurationError("Epochs must be >= 1, got %r." % self.epochs)
        if self.augment_copies < 0:
            raise ConfigurationError(
                "Augmented copies must be >= 0, got %r." % self.augment_copies
            )
        if self.lr < 0:
            raise ConfigurationError("Learning rate must be >= 0, got %r." % self.lr)
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(m=self.margin, alpha=self.alpha, batch_size=self.batch_size)


@dataclass
class TrainResult:
    """Trained network, mean loss per epoch and the phases the run saw."""

    network: Network
    loss_curve: List[float]
    phases_seen: List[Phase]


def train(items: Iterable[DatasetItem], cfg: TrainConfig) -> TrainResult:
    """Train one model variant from scratch.

    ``items`` are the preprocessed originals; the run adds
    ``cfg.augment_copies`` augmentations of each before building the
    variant's view. Every step samples ``N`` examples, pushes all their
    towers through the one shared network as a single batch, and applies
    the summed gradient.

    .. code-block:: python

        result = train(items, TrainConfig(variant=ModelTag.PRE_POST, epochs=20))
        result.loss_curve[-1] < result.loss_curve[0]
        # True

    :param items: Preprocessed original items.
    :type items: Iterable[:class:`.DatasetItem`]

    :param cfg: Training configuration.
    :type cfg: :class:`.TrainConfig`

    :return: Network and loss curve.
    :rtype: :class:`.TrainResult`

    :raises SamplingError: If fewer than two identities are available.
    :raises TrainingError: If the loss becomes non-finite.
    """
    originals = [item for item in items if item.is_original]
    if len({item.identity_id for item in originals}) < 2:
        raise SamplingError("Training needs at least two identities.")

    expanded = expand_with_augmentations(originals, cfg.augment, cfg.augment_copies)
    view = build_variant_dataset(expanded, cfg.variant)
    tensors = stack_images([item.image for item in view.items], cfg.arch)

    net = init_network(cfg.arch, cfg.seed, cfg.variant)
    loss_cls = get_loss_by_name(cfg.loss)
    loss = loss_cls(
        cfg.loss_config(), strategy=cfg.mining, hard_fraction=cfg.hard_fraction
    )
    optimizer = MomentumSGD(lr=cfg.lr, momentum=cfg.momentum)

    batch_size = cfg.batch_size
    steps = max(1, len(view) // batch_size)
    curve: List[float] = []

    for epoch in range(cfg.epochs):
        embeddings = net.embed_tensors(tensors) if loss.needs_embeddings else None
        rng = derive_rng(cfg.seed, 1, epoch)
        step_losses = []

        for _ in range(steps):
            step = optimizer.steps
            batch = loss.sample(view, batch_size, rng, embeddings)
            n = len(batch)

            # towers stacked as [t0 rows, t1 rows, ...] through one network
            flat_indices = batch.indices.T.reshape(-1)
            outputs, cache = net.forward(tensors[flat_indices])
            towers = [outputs[t * n : (t + 1) * n] for t in range(loss.towers)]

            value, tower_grads = loss.compute(towers, batch.labels)
            if not np.isfinite(value):
                raise TrainingError(messages.NON_FINITE_LOSS, step=step)

            try:
                grads = net.backward(cache, np.concatenate(tower_grads, axis=0))
            except TrainingError as err:
                raise TrainingError(err.message, step=step)
            optimizer.step(net, grads)
            step_losses.append(value)

        mean_loss = float(np.mean(step_losses))
        curve.append(mean_loss)
        logger.info(messages.EPOCH_LOSS, epoch + 1, cfg.epochs, mean_loss)

    return TrainResult(network=net, loss_curve=curve, phases_seen=view.phases_served())


@dataclass(frozen=True)
class EvalMetrics:
    """Verification metrics at one threshold.

    ``accuracy`` counts correct decisions over all evaluated pairs, so it
    equals ``1 - (FA * impostor_share + FR * genuine_share)``.
    """

    accuracy: float
    false_acceptance: float
    false_rejection: float
    threshold_used: float
    genuine_count: int = 0
    impostor_count: int = 0


def _image_of(member) -> Image:
    return member.image if isinstance(member, DatasetItem) else member


def pair_distances(net: Network, pairs: Sequence[Tuple]) -> np.ndarray:
    """Squared L2 distance of every pair.

    Pair members may be :class:`.Image` or :class:`.DatasetItem`; each
    distinct member is embedded once.
    """
    if not pairs:
        return np.zeros(0, dtype=np.float64)

    slots = {}
    images = []
    for pair in pairs:
        for member in pair:
            if id(member) not in slots:
                slots[id(member)] = len(images)
                images.append(_image_of(member))

    table = net.embed_batch(images).astype(np.float64)
    left = table[[slots[id(a)] for a, _ in pairs]]
    right = table[[slots[id(b)] for _, b in pairs]]
    return np.sum((left - right) ** 2, axis=1)


def metrics_from_distances(
    genuine: np.ndarray, impostor: np.ndarray, theta: float
) -> EvalMetrics:
    """:class:`.EvalMetrics` from precomputed distances.

    :raises EvaluationError: If either distance set is empty.
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise EvaluationError(
            "Evaluation needs genuine and impostor pairs (%d genuine, %d impostor)."
            % (genuine.size, impostor.size)
        )

    accepted_impostors = int(np.count_nonzero(impostor <= theta))
    rejected_genuine = int(np.count_nonzero(genuine > theta))
    total = genuine.size + impostor.size
    return EvalMetrics(
        accuracy=(total - accepted_impostors - rejected_genuine) / total,
        false_acceptance=accepted_impostors / impostor.size,
        false_rejection=rejected_genuine / genuine.size,
        threshold_used=float(theta),
        genuine_count=int(genuine.size),
        impostor_count=int(impostor.size),
    )


def evaluate(
    net: Network,
    genuine_pairs: Sequence[Tuple],
    impostor_pairs: Sequence[Tuple],
    theta: float,
) -> EvalMetrics:
    """Accuracy, false acceptance and false rejection at ``theta``.

    :param net: Trained network.
    :type net: :class:`.Network`

    :param genuine_pairs: Same-identity pairs.
    :type genuine_pairs: Sequence[tuple]

    :param impostor_pairs: Different-identity pairs.
    :type impostor_pairs: Sequence[tuple]

    :param theta: Acceptance threshold on squared L2 distance.
    :type theta: float

    :return: Metrics.
    :rtype: :class:`.EvalMetrics`

    :raises EvaluationError: If a pair set is empty.
    """
    if not genuine_pairs or not impostor_pairs:
        raise EvaluationError(
            "Evaluation needs genuine and impostor pairs (%d genuine, %d impostor)."
            % (len(genuine_pairs), len(impostor_pairs))
        )
    return metrics_from_distances(
        pair_distances(net, genuine_pairs), pair_distances(net, impostor_pairs), theta
    )


@dataclass(frozen=True)
class SweepResult:
    rows: List[EvalMetrics]
    theta_eer: float


def _check_grid(grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(list(grid), dtype=np.float64)
    if grid.size == 0:
        raise EvaluationError("Threshold grid is empty.")
    if np.any(np.diff(grid) < 0):
        raise EvaluationError("Threshold grid must be sorted ascending.")
    return grid


def sweep_distances(
    genuine: np.ndarray, impostor: np.ndarray, grid: Sequence[float]
) -> SweepResult:
    """Metrics at every grid point; the equal-error threshold minimises
    ``|FA - FR|`` with ties going to the smaller ``theta``.
    """
    grid = _check_grid(grid)
    rows = [metrics_from_distances(genuine, impostor, theta) for theta in grid]
    for row in rows:
        logger.debug(
            messages.SWEEP_ROW,
            row.threshold_used,
            row.false_acceptance,
            row.false_rejection,
            row.accuracy,
        )

    gaps = np.array([abs(r.false_acceptance - r.false_rejection) for r in rows])
    return SweepResult(rows=rows, theta_eer=float(grid[int(np.argmin(gaps))]))


def sweep_threshold(
    net: Network,
    genuine_pairs: Sequence[Tuple],
    impostor_pairs: Sequence[Tuple],
    grid: Sequence[float],
) -> SweepResult:
    """Evaluate every ``theta`` of an ascending grid.

    Distances are computed once and reused for every grid point.

    :raises EvaluationError: If the grid is empty or unsorted, or a pair
      set is empty.
    """
    _check_grid(grid)
    if not genuine_pairs or not impostor_pairs:
        raise EvaluationError("Sweep needs genuine and impostor pairs.")
    return sweep_distances(
        pair_distances(net, genuine_pairs), pair_distances(net, impostor_pairs), grid
    )


def parse_theta_grid(text: str) -> List[float]:
    """Parse ``"start:stop:step"`` (stop included) or ``"0.5,1,1.5"``.

    :raises ConfigurationError: On malformed text or a non-positive step.
    """
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(part) for part in text.split(":"))
            if step <= 0:
                raise ConfigurationError("Threshold grid step must be > 0.")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(max(count, 0))]
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError("Malformed threshold grid '%s'." % text)


def _comment_lines(fh, config_text: Optional[str]) -> None:
    for line in (config_text or "").splitlines():
        fh.write("# %s\n" % line)


def write_loss_curve_csv(
    path: PathLike, curve: Sequence[float], config_text: Optional[str] = None
) -> None:
    with open(path, "w", newline="") as fh:
        _comment_lines(fh, config_text)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "mean_loss"))
        for epoch, value in enumerate(curve, start=1):
            writer.writerow((epoch, "%.8f" % value))


def _metric_row(row: EvalMetrics):
    return (
        "%.6f" % row.threshold_used,
        "%.6f" % row.false_acceptance,
        "%.6f" % row.false_rejection,
        "%.6f" % row.accuracy,
    )


_METRIC_HEADER = ("theta", "false_acceptance", "false_rejection", "accuracy")


def write_sweep_csv(
    path: PathLike, result: SweepResult, config_text: Optional[str] = None
) -> None:
    """One row per ``theta``; the equal-error threshold goes in a comment."""
    with open(path, "w", newline="") as fh:
        _comment_lines(fh, config_text)
        fh.write("# theta_eer=%.6f\n" % result.theta_eer)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_METRIC_HEADER)
        for row in result.rows:
            writer.writerow(_metric_row(row))


def write_metrics_csv(
    path: PathLike, metrics: Iterable[EvalMetrics], config_text: Optional[str] = None
) -> None:
    with open(path, "w", newline="") as fh:
        _comment_lines(fh, config_text)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_METRIC_HEADER)
        for row in metrics:
            writer.writerow(_metric_row(row))
