"""Dataset items, per-variant training views, identity splits and the
image manifest written by ``ocverify preprocess``.
"""
import csv
import itertools
import logging
import os
import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ocverify import messages
from ocverify.exceptions import DatasetError
from ocverify.helpers import derive_rng
from ocverify.imaging import Image, load_image
from ocverify.preprocess import AugmentConfig, augment_many
from ocverify.structures import ModelTag, Phase
from ocverify.typed import PathLike

__all__ = [
    "DatasetItem",
    "ManifestRow",
    "TrainingView",
    "build_variant_dataset",
    "expand_with_augmentations",
    "load_manifest_items",
    "make_eval_pairs",
    "parse_image_name",
    "read_manifest",
    "split_identities",
    "write_manifest",
]

logger = logging.getLogger(__name__)

_IMAGE_NAME = re.compile(
    r"^(?P<identity>[^/\\]+)_(?P<phase>PRE|POST)\.(?:jpe?g|pgm|ppm|pnm)$",
    re.IGNORECASE,
)

MANIFEST_FIELDS = ("identity", "phase", "path", "sha1")

ItemPair = Tuple["DatasetItem", "DatasetItem"]


@dataclass(frozen=True)
class DatasetItem:
    """One (possibly augmented) photograph of one identity."""

    item_id: str
    identity_id: str
    phase: Phase
    image: Image
    augmented_from: Optional[str] = None

    @property
    def is_original(self) -> bool:
        return self.augmented_from is None


def parse_image_name(name: str) -> Tuple[str, Phase]:
    """Split ``<identity>_<PRE|POST>.jpg`` into identity and phase.

    :raises DatasetError: If the name does not follow the layout.
    """
    match = _IMAGE_NAME.match(os.path.basename(str(name)))
    if not match:
        raise DatasetError(messages.BAD_FILENAME % name)
    return match.group("identity"), Phase(match.group("phase").upper())


@dataclass(frozen=True)
class TrainingView:
    """Items visible to one model variant.

    Examples draw an anchor from one side and partners (positive, negative,
    pair partner) from the other. Same-phase views use one list for both
    sides; the cross-phase view puts PRE items on side A and POST items on
    side B and samples both directions.
    """

    variant: ModelTag
    items: Tuple[DatasetItem, ...]
    side_a: Tuple[int, ...]
    side_b: Tuple[int, ...]

    @property
    def cross_phase(self) -> bool:
        return self.side_a != self.side_b

    def __len__(self) -> int:
        return len(self.items)

    def identity_of(self, index: int) -> str:
        return self.items[index].identity_id

    def identities(self) -> List[str]:
        return sorted({item.identity_id for item in self.items})

    def phases_served(self) -> List[Phase]:
        seen = {item.phase for item in self.items}
        return [phase for phase in Phase if phase in seen]

    def groups(self, side: Sequence[int]) -> "OrderedDict[str, List[int]]":
        """Item indices of ``side`` keyed by identity, identities sorted."""
        grouped: Dict[str, List[int]] = {}
        for index in side:
            grouped.setdefault(self.identity_of(index), []).append(index)
        return OrderedDict(sorted(grouped.items()))

    def genuine_pairs(self) -> List[Tuple[int, int]]:
        """Every same-identity pair the view can form."""
        pairs: List[Tuple[int, int]] = []
        groups_a = self.groups(self.side_a)
        if self.cross_phase:
            groups_b = self.groups(self.side_b)
            for identity, left in groups_a.items():
                pairs.extend(itertools.product(left, groups_b.get(identity, [])))
        else:
            for left in groups_a.values():
                pairs.extend(itertools.combinations(left, 2))
        return pairs

    def impostor_pairs(self) -> List[Tuple[int, int]]:
        if self.cross_phase:
            candidates = itertools.product(self.side_a, self.side_b)
        else:
            candidates = itertools.combinations(self.side_a, 2)
        return [
            (a, b) for a, b in candidates if self.identity_of(a) != self.identity_of(b)
        ]


def build_variant_dataset(items: Iterable[DatasetItem], variant) -> TrainingView:
    """Select the items a model variant trains on.

    ``PRE-PRE`` sees PRE items only, ``POST-POST`` POST items only and
    ``PRE-POST`` pairs PRE anchors with POST partners and vice versa.

    :param items: Preprocessed items, originals and augmentations.
    :type items: Iterable[:class:`.DatasetItem`]

    :param variant: Model tag.
    :type variant: :class:`.ModelTag` or str

    :return: Training view.
    :rtype: :class:`.TrainingView`

    :raises DatasetError: If the variant has no eligible items.
    """
    variant = ModelTag.parse(variant)
    items = list(items)

    if variant is ModelTag.PRE_POST:
        pre = [item for item in items if item.phase is Phase.PRE]
        post = [item for item in items if item.phase is Phase.POST]
        if not pre or not post:
            raise DatasetError(messages.EMPTY_VIEW % variant.value)
        view = TrainingView(
            variant=variant,
            items=tuple(pre + post),
            side_a=tuple(range(len(pre))),
            side_b=tuple(range(len(pre), len(pre) + len(post))),
        )
    else:
        phase = Phase.PRE if variant is ModelTag.PRE_PRE else Phase.POST
        pool = [item for item in items if item.phase is phase]
        if not pool:
            raise DatasetError(messages.EMPTY_VIEW % variant.value)
        indices = tuple(range(len(pool)))
        view = TrainingView(
            variant=variant, items=tuple(pool), side_a=indices, side_b=indices
        )

    logger.debug(
        messages.VIEW_AUDIT, variant.value, [p.value for p in view.phases_served()]
    )
    return view


def expand_with_augmentations(
    items: Iterable[DatasetItem], cfg: AugmentConfig, copies: int
) -> List[DatasetItem]:
    """Each original followed by ``copies`` augmentations of it.

    Copy ``k`` of the ``i``-th original uses random stream ``(i, k)``, so
    the result does not depend on how work is split across workers.
    """
    expanded: List[DatasetItem] = []
    for index, item in enumerate(items):
        expanded.append(item)
        for k, image in enumerate(augment_many(item.image, cfg, copies, index)):
            expanded.append(
                DatasetItem(
                    item_id="%s#%d" % (item.item_id, k + 1),
                    identity_id=item.identity_id,
                    phase=item.phase,
                    image=image,
                    augmented_from=item.item_id,
                )
            )
    return expanded


def split_identities(
    identities: Iterable[str], test_fraction: float = 0.2, seed: int = 0
) -> Tuple[List[str], List[str]]:
    """Deterministic identity-level train/test split.

    :return: ``(train_ids, test_ids)``, each sorted.

    :raises DatasetError: If the split would leave either side empty.
    """
    unique = sorted(set(identities))
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("Test fraction must be in (0, 1), got %r." % test_fraction)
    if len(unique) < 2:
        raise DatasetError("Cannot split %d identities." % len(unique))

    n_test = min(len(unique) - 1, max(1, int(round(len(unique) * test_fraction))))
    order = derive_rng(seed, 0x5EED).permutation(len(unique))
    test = sorted(unique[i] for i in order[:n_test])
    train = sorted(unique[i] for i in order[n_test:])
    return train, test


def make_eval_pairs(
    items: Iterable[DatasetItem], variant, seed: int = 0
) -> Tuple[List[ItemPair], List[ItemPair]]:
    """All genuine pairs of a variant plus as many sampled impostor pairs.

    :return: ``(genuine, impostor)`` lists of item pairs.
    """
    view = build_variant_dataset(items, variant)
    genuine = view.genuine_pairs()
    impostors = view.impostor_pairs()

    count = min(len(genuine), len(impostors))
    chosen = derive_rng(seed, 0xE7A1).choice(len(impostors), size=count, replace=False)
    impostors = [impostors[i] for i in sorted(chosen)]

    def resolve(pairs):
        return [(view.items[a], view.items[b]) for a, b in pairs]

    return resolve(genuine), resolve(impostors)


@dataclass(frozen=True)
class ManifestRow:
    identity: str
    phase: Phase
    path: str
    sha1: str = ""


def write_manifest(
    path: PathLike, rows: Iterable[ManifestRow], config_text: str = ""
) -> None:
    """CSV manifest, preceded by ``# key=value`` lines of the effective
    configuration.
    """
    with open(path, "w", newline="") as fh:
        for line in config_text.splitlines():
            fh.write("# %s\n" % line)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for row in rows:
            writer.writerow((row.identity, row.phase.value, row.path, row.sha1))


def read_manifest(path: PathLike) -> List[ManifestRow]:
    """Parse a manifest.

    :raises DatasetError: If the file is missing or malformed.
    """
    if not os.path.isfile(path):
        raise DatasetError(messages.MANIFEST_MISSING % path)

    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]

    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(MANIFEST_FIELDS[:3]) <= set(
        reader.fieldnames
    ):
        raise DatasetError("Manifest '%s' has no identity/phase/path header." % path)

    rows = []
    for record in reader:
        try:
            phase = Phase(record["phase"].strip().upper())
        except ValueError:
            raise DatasetError(
                "Bad phase %r in manifest '%s'." % (record["phase"], path)
            )
        rows.append(
            ManifestRow(
                identity=record["identity"],
                phase=phase,
                path=record["path"],
                sha1=record.get("sha1") or "",
            )
        )
    return rows


def load_manifest_items(
    path: PathLike, identities: Optional[Iterable[str]] = None
) -> List[DatasetItem]:
    """Load the images a manifest lists, paths relative to the manifest.

    :param identities: (optional) Keep only these identities.
    """
    keep = set(identities) if identities is not None else None
    base = os.path.dirname(os.path.abspath(str(path)))

    items = []
    for row in read_manifest(path):
        if keep is not None and row.identity not in keep:
            continue
        image_path = os.path.join(base, row.path)
        items.append(
            DatasetItem(
                item_id="%s_%s" % (row.identity, row.phase.value),
                identity_id=row.identity,
                phase=row.phase,
                image=load_image(image_path),
            )
        )
    return items
