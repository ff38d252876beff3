"""Shared enumerations."""
from enum import Enum, unique


@unique
class ModelTag(Enum):
    """Which image phases a model compares."""

    PRE_PRE = "PRE-PRE"
    POST_POST = "POST-POST"
    PRE_POST = "PRE-POST"

    @classmethod
    def parse(cls, value: str) -> "ModelTag":
        """Look up a tag by its value (``PRE-POST``) or member name
        (``PRE_POST``).
        """
        if isinstance(value, cls):
            return value

        normalized = str(value).strip().upper()
        for tag in cls:
            if normalized in (tag.value, tag.name):
                return tag

        raise ValueError("Unknown model tag '%s'." % value)

    @property
    def code(self) -> int:
        """Single byte used by the model and database file formats."""
        return _TAG_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ModelTag":
        for tag, tag_code in _TAG_CODES.items():
            if tag_code == code:
                return tag
        raise ValueError("Unknown model tag code %d." % code)


_TAG_CODES = {
    ModelTag.PRE_PRE: 1,
    ModelTag.POST_POST: 2,
    ModelTag.PRE_POST: 3,
}


@unique
class Phase(Enum):
    """Operation status of a photograph."""

    PRE = "PRE"
    POST = "POST"

    @property
    def duplicate_model(self) -> ModelTag:
        """Model used to find duplicates among images of this phase."""
        return ModelTag.PRE_PRE if self is Phase.PRE else ModelTag.POST_POST


@unique
class MiningStrategy(Enum):
    """How triplet negatives are chosen."""

    RANDOM = "random"
    SEMI_HARD = "semi-hard"
    MIXED = "mixed"

    @classmethod
    def parse(cls, value: str) -> "MiningStrategy":
        if isinstance(value, cls):
            return value

        normalized = str(value).strip().lower().replace("_", "-")
        for strategy in cls:
            if normalized == strategy.value:
                return strategy

        raise ValueError("Unknown mining strategy '%s'." % value)
