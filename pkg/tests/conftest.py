import numpy as np
import pytest

from ocverify.database import EmbeddingDatabase
from ocverify.imaging import encode_jpeg
from ocverify.pipeline import ModelSet, PipelineConfig
from ocverify.structures import ModelTag
from ocverify.synthdata import SynthIdentitySpec, gen_identity_pair
from tests import settings
from tests.helpers import gradient_image, synthetic_items, tiny_network


@pytest.fixture(scope="session")
def face_spec():
    return SynthIdentitySpec.from_seed(settings.SEED)


# noinspection PyShadowingNames
@pytest.fixture(scope="session")
def face_pair(face_spec):
    return gen_identity_pair(face_spec, canvas=settings.FACE_CANVAS)


# noinspection PyShadowingNames
@pytest.fixture(scope="session")
def face_jpegs(face_pair):
    pre, post = face_pair
    return encode_jpeg(pre, 95), encode_jpeg(post, 95)


@pytest.fixture(scope="session")
def items():
    return synthetic_items(count=4, seed=settings.SEED)


@pytest.fixture(scope="function")
def gray_image():
    return gradient_image(channels=1)


@pytest.fixture(scope="function")
def rgb_image():
    return gradient_image(channels=3)


@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(settings.SEED)


@pytest.fixture(scope="module")
def models():
    return ModelSet(
        tiny_network(seed=1, tag=ModelTag.PRE_PRE).astype(np.float32),
        tiny_network(seed=2, tag=ModelTag.POST_POST).astype(np.float32),
        tiny_network(seed=3, tag=ModelTag.PRE_POST).astype(np.float32),
    )


@pytest.fixture(scope="function")
def pipeline_config():
    return PipelineConfig(theta=1e-6)


@pytest.fixture(scope="function")
def db_path(tmp_path):
    return str(tmp_path / "embeddings.ocdb")


# noinspection PyShadowingNames
@pytest.fixture(scope="function")
def database(db_path):
    return EmbeddingDatabase.open(db_path)
