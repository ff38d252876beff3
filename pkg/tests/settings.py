import os
from tempfile import mkdtemp
from time import time

from prettyconf import Configuration

config = Configuration()

# Append epoch to prevent test runs from clobbering each other.
TEMP_PREFIX = "ocverify-test-" + str(int(time()))

SEED = config("OCVERIFY_SEED", default=7, cast=int)

# End-to-end runs train real models on the synthetic corpus.
ACCEPTANCE = config("OCVERIFY_ACCEPTANCE", default=False, cast=config.boolean)
ACCEPTANCE_DIR = config(
    "OCVERIFY_ACCEPTANCE_DIR",
    default=mkdtemp(prefix=TEMP_PREFIX),
    cast=lambda path: os.path.abspath(path) if path else None,
)
ACCEPTANCE_EPOCHS = config("OCVERIFY_ACCEPTANCE_EPOCHS", default=100, cast=int)

# Small enough that gradient checks finish in seconds.
TINY_SIDE = 16
TINY_BLOCKS = ((4, 3, 2), (6, 3, 2))
TINY_DIM = 5

FACE_CANVAS = 64
