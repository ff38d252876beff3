"""Custom typed annotations."""
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Tuple, Type, Union

import numpy as np

if TYPE_CHECKING:
    from ocverify.losses.contrastive import ContrastiveLoss  # noqa
    from ocverify.losses.triplet import TripletLoss  # noqa


Losses = Union[Type["ContrastiveLoss"], Type["TripletLoss"]]
PathLike = Union[str, Path]
Params = Dict[str, np.ndarray]
Grads = Dict[str, np.ndarray]
BlockCoord = Tuple[int, int]
Rect = Tuple[int, int, int, int]
