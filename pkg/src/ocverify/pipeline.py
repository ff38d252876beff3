"""End-to-end pair verification and duplicate lookup.

Pair verification screens both photographs for forgery first and stops
there when either one fails; only genuine pairs are embedded and compared.
Duplicate lookup embeds one photograph with the model of its phase, scans
the stored embeddings of that model and always stores the new one.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum, unique
from typing import Dict, List, Optional, Tuple

import numpy as np

from ocverify import messages
from ocverify.database import EmbeddingDatabase, EmbeddingRecord, record_to_dict
from ocverify.exceptions import (
    CorruptDatabaseError,
    ImageError,
    InputError,
    ModelFileError,
    StorageError,
)
from ocverify.forensics import ElaConfig, ElaReport, check_image_forgery, report_to_dict
from ocverify.imaging import Image, decode_jpeg
from ocverify.neuralnet import MODEL_SUFFIX, Network, load_network
from ocverify.preprocess import DEFAULT_DILATE_K, CannyParams, remove_background
from ocverify.structures import ModelTag, Phase
from ocverify.typed import PathLike

__all__ = [
    "DuplicateReport",
    "ModelSet",
    "Outcome",
    "PipelineConfig",
    "Verdict",
    "check_duplicates",
    "duplicates_to_json",
    "record_to_json",
    "verdict_to_json",
    "verify_pair",
]

logger = logging.getLogger(__name__)


@unique
class Outcome(Enum):
    ACCEPTED = "accepted"
    REJECTED_FORGERY = "rejected_forgery"
    REJECTED_DISTANCE = "rejected_distance"


@dataclass(frozen=True)
class PipelineConfig:
    """Threshold, forensic and preprocessing settings of the pipeline.

    ``theta_overrides`` replaces ``theta`` for individual models.
    """

    theta: float = 1.0
    theta_overrides: Dict[ModelTag, float] = field(default_factory=dict)
    ela: ElaConfig = field(default_factory=ElaConfig)
    canny: CannyParams = field(default_factory=CannyParams)
    dilate_k: int = DEFAULT_DILATE_K
    background_removal: bool = True

    def theta_for(self, tag: ModelTag) -> float:
        return float(self.theta_overrides.get(ModelTag.parse(tag), self.theta))


class ModelSet:
    """The three tagged networks.

    :raises ModelFileError: If a network carries the wrong tag.
    """

    def __init__(self, pre_pre: Network, post_post: Network, pre_post: Network) -> None:
        self._models = {
            ModelTag.PRE_PRE: pre_pre,
            ModelTag.POST_POST: post_post,
            ModelTag.PRE_POST: pre_post,
        }
        for tag, net in self._models.items():
            if net.tag is not tag:
                raise ModelFileError(
                    "Model in slot %s is tagged %s." % (tag.value, net.tag.value)
                )

    def __getitem__(self, tag) -> Network:
        return self._models[ModelTag.parse(tag)]

    @classmethod
    def load(cls, model_dir: PathLike) -> "ModelSet":
        """Read ``PRE-PRE.ocv``, ``POST-POST.ocv`` and ``PRE-POST.ocv``."""
        nets = {
            tag: load_network(os.path.join(str(model_dir), tag.value + MODEL_SUFFIX))
            for tag in ModelTag
        }
        return cls(
            nets[ModelTag.PRE_PRE], nets[ModelTag.POST_POST], nets[ModelTag.PRE_POST]
        )


@dataclass(frozen=True)
class DuplicateReport:
    """Outcome of one duplicate lookup."""

    phase: Phase
    model_tag: ModelTag
    duplicates: Tuple[Tuple[int, float], ...]
    stored_record_id: int

    @property
    def duplicate_ids(self) -> List[int]:
        return [record_id for record_id, _ in self.duplicates]


@dataclass(frozen=True)
class Verdict:
    """Result of :func:`verify_pair`.

    ``distance`` is absent for forgery rejections; ``ela_reports`` holds the
    reports of the images that were screened, keyed ``pre`` and ``post``.
    ``duplicate_reports`` is keyed by phase and filled only when a database
    was searched; ``duplicates`` lists every flagged record id once.
    """

    outcome: Outcome
    distance: Optional[float]
    theta: float
    ela_reports: Dict[str, ElaReport] = field(default_factory=dict)
    duplicates: Tuple[int, ...] = ()
    duplicate_reports: Dict[str, DuplicateReport] = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED


def _decode(data: bytes, name: str) -> Image:
    try:
        return decode_jpeg(data)
    except ImageError as err:
        raise InputError("Cannot decode %s image: %s" % (name, err.message))


def _screen(img: Image, name: str, cfg: PipelineConfig) -> ElaReport:
    try:
        return check_image_forgery(img, cfg.ela)
    except ImageError as err:
        raise InputError("Cannot screen %s image: %s" % (name, err.message))


def _prepare(img: Image, cfg: PipelineConfig) -> Image:
    return remove_background(
        img, cfg.canny, cfg.dilate_k, enabled=cfg.background_removal
    )


def _as_phase(phase) -> Phase:
    return phase if isinstance(phase, Phase) else Phase(str(phase).strip().upper())


def verify_pair(
    pre_jpeg: bytes,
    post_jpeg: bytes,
    models: ModelSet,
    cfg: PipelineConfig = PipelineConfig(),
    db: Optional[EmbeddingDatabase] = None,
    hints: Tuple[str, str] = ("", ""),
) -> Verdict:
    """Forgery gate, then PRE-POST distance against ``theta``.

    .. code-block:: python

        verdict = verify_pair(pre_bytes, post_bytes, ModelSet.load('models'))
        verdict.outcome
        # <Outcome.ACCEPTED: 'accepted'>

    :param pre_jpeg: Pre-operation JPEG.
    :type pre_jpeg: bytes

    :param post_jpeg: Post-operation JPEG.
    :type post_jpeg: bytes

    :param models: Loaded networks.
    :type models: :class:`.ModelSet`

    :param cfg: (optional) Thresholds and settings.
    :type cfg: :class:`.PipelineConfig`

    :param db: (optional) Database for the duplicate lookup of a genuine
      pair; both embeddings are stored in it.
    :type db: :class:`.EmbeddingDatabase` or None

    :param hints: (optional) Identity hints stored with the pre and post
      embeddings.
    :type hints: tuple

    :return: Verdict.
    :rtype: :class:`.Verdict`

    :raises InputError: If either image cannot be decoded or is smaller
      than one 8x8 block.
    :raises StorageError: If the database lookup or append fails.
    """
    images = {"pre": _decode(pre_jpeg, "pre"), "post": _decode(post_jpeg, "post")}
    theta = cfg.theta_for(ModelTag.PRE_POST)

    reports: Dict[str, ElaReport] = {}
    for name, img in images.items():
        reports[name] = _screen(img, name, cfg)
        if reports[name].forged:
            logger.info(messages.FORGERY_EARLY_RETURN, name)
            return Verdict(
                outcome=Outcome.REJECTED_FORGERY,
                distance=None,
                theta=theta,
                ela_reports=reports,
            )

    prepared = {name: _prepare(img, cfg) for name, img in images.items()}
    net = models[ModelTag.PRE_POST]
    pre_emb = net.embed(prepared["pre"]).astype(np.float64)
    post_emb = net.embed(prepared["post"]).astype(np.float64)
    distance = float(np.sum((pre_emb - post_emb) ** 2))
    outcome = Outcome.ACCEPTED if distance <= theta else Outcome.REJECTED_DISTANCE

    lookups: Dict[str, DuplicateReport] = {}
    if db is not None:
        for phase, hint in zip(Phase, hints):
            name = phase.value.lower()
            lookups[phase.value] = _lookup(prepared[name], phase, models, db, cfg, hint)
    flagged = sorted({i for report in lookups.values() for i in report.duplicate_ids})

    return Verdict(
        outcome=outcome,
        distance=distance,
        theta=theta,
        ela_reports=reports,
        duplicates=tuple(flagged),
        duplicate_reports=lookups,
    )


def _lookup(
    img: Image,
    phase: Phase,
    models: ModelSet,
    db: EmbeddingDatabase,
    cfg: PipelineConfig,
    identity_hint: str,
) -> DuplicateReport:
    tag = phase.duplicate_model
    theta = cfg.theta_for(tag)
    vector = models[tag].embed(img).astype(np.float32)

    stored = db.scan(tag)
    duplicates = []
    if stored:
        matrix = np.stack([record.vector for record in stored])
        if matrix.shape[1] != vector.size:
            raise CorruptDatabaseError(
                messages.DB_DIMENSION_MISMATCH
                % (tag.value, matrix.shape[1], vector.size)
            )
        distances = np.sum(
            (matrix.astype(np.float64) - vector.astype(np.float64)) ** 2, axis=1
        )
        for record, distance in zip(stored, distances):
            if distance <= theta:
                duplicates.append((record.record_id, float(distance)))
                logger.warning(
                    messages.DUPLICATE_FOUND, phase.value, record.record_id, distance
                )

    try:
        new_record = db.put_vector(tag, vector, identity_hint)
    except OSError as err:
        raise StorageError("Cannot store embedding: %s" % err)

    return DuplicateReport(
        phase=phase,
        model_tag=tag,
        duplicates=tuple(duplicates),
        stored_record_id=new_record.record_id,
    )


def check_duplicates(
    img_jpeg: bytes,
    phase,
    models: ModelSet,
    db: EmbeddingDatabase,
    cfg: PipelineConfig = PipelineConfig(),
    identity_hint: str = "",
) -> DuplicateReport:
    """Report stored embeddings within ``theta`` of a new photograph.

    The photograph is embedded with the model of its phase (PRE-PRE for
    PRE, POST-POST for POST) and compared against every stored record of
    that model. The new embedding is stored whether or not duplicates were
    found.

    :param img_jpeg: JPEG bytes of a photograph already screened as genuine.
    :type img_jpeg: bytes

    :param phase: Phase of the photograph.
    :type phase: :class:`.Phase` or str

    :param db: Database to scan and append to.
    :type db: :class:`.EmbeddingDatabase`

    :return: Duplicates as ``(record_id, distance)`` plus the new record id.
    :rtype: :class:`.DuplicateReport`

    :raises InputError: If the image cannot be decoded.
    :raises CorruptDatabaseError: If stored vectors do not match the model.
    :raises StorageError: If the database cannot be written.
    """
    phase = _as_phase(phase)
    img = _prepare(_decode(img_jpeg, phase.value.lower()), cfg)
    return _lookup(img, phase, models, db, cfg, identity_hint)


def verdict_to_dict(verdict: Verdict) -> dict:
    return {
        "outcome": verdict.outcome.value,
        "distance": None if verdict.distance is None else round(verdict.distance, 8),
        "theta": verdict.theta,
        "ela_reports": {
            name: report_to_dict(report) for name, report in verdict.ela_reports.items()
        },
        "duplicates": list(verdict.duplicates),
        "duplicate_reports": {
            phase: duplicates_to_dict(report)
            for phase, report in verdict.duplicate_reports.items()
        },
    }


def verdict_to_json(verdict: Verdict) -> str:
    """Stable JSON text of a verdict (sorted keys)."""
    return json.dumps(verdict_to_dict(verdict), sort_keys=True)


def duplicates_to_dict(report: DuplicateReport) -> dict:
    return {
        "phase": report.phase.value,
        "model_tag": report.model_tag.value,
        "duplicates": [
            {"record_id": record_id, "distance": round(distance, 8)}
            for record_id, distance in report.duplicates
        ],
        "stored_record_id": report.stored_record_id,
    }


def duplicates_to_json(report: DuplicateReport) -> str:
    return json.dumps(duplicates_to_dict(report), sort_keys=True)


def record_to_json(record: EmbeddingRecord) -> str:
    return json.dumps(record_to_dict(record), sort_keys=True)
